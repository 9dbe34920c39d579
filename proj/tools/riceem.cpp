#include "riceem/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return riceem::run_cli(argc, argv, std::cout, std::cerr); }
