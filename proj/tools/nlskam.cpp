#include <iostream>

#include "nlskam/cli.hpp"

int main(int argc, char** argv) {
    return nlskam::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
