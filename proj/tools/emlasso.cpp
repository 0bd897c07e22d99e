#include <iostream>

#include "emlasso/cli.hpp"

int main(int argc, char** argv) { return emlasso::run_cli(argc, argv, std::cout, std::cerr); }
