#include "grace/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return grace::cli::run_cli(argc, argv, std::cout, std::cerr); }
