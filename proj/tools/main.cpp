#include "ovhhir/cli.hpp"

#include <iostream>

int main(int argc, char ** argv) {
    return ovhhir::run_cli(argc, argv, std::cout, std::cerr);
}
