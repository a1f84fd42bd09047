#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace nlskam {

/// A divisor required by the right-hand side fell below its threshold.
class SmallDivisorError : public std::runtime_error {
public:
    SmallDivisorError(std::vector<int> k, std::vector<int> l, std::string sector, int block_a, int block_b, double value,
                      double threshold);

    std::vector<int> k;
    std::vector<int> l;
    std::string sector;
    int block_a;
    int block_b;
    double value;
    double threshold;
};

/// A block system was numerically singular.
class SolveFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The parameter point violates the nonresonance conditions of some round.
class ParameterExcluded : public std::runtime_error {
public:
    ParameterExcluded(const std::string& what, int round) : std::runtime_error(what), round(round) {}
    int round;
};

/// Term bookkeeping exceeded the configured budget.
class DegreeOverflow : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The low jet did not shrink after the first inner step.
class ContractionFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace nlskam
