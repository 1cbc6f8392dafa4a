#include <iostream>

#include "seednorm/cli.hpp"

int main(int argc, char** argv) {
    return seednorm::run_cli(argc, argv, std::cout, std::cerr);
}
