#include <iostream>

#include "blindsr/cli.hpp"

int main(int argc, char** argv) { return blindsr::run_cli(argc, argv, std::cout, std::cerr); }
