#include <iostream>

#include "spass/cli.hpp"

int main(int argc, char** argv) {
    return spass::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
