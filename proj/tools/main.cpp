#include <iostream>

#include "cvg/cli.hpp"

int main(int argc, char** argv) { return cvg::run_cli(argc, argv, std::cout, std::cerr); }
