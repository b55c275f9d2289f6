#include <iostream>
#include <string>
#include <vector>

#include "dualmim/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dualmim::run_cli(args, std::cout, std::cerr);
}
