#include <iostream>

#include "lerm/cli.hpp"

int main(int argc, char** argv) { return lerm::cli::run(argc, argv, std::cout, std::cerr); }
