#include <iostream>

#include "memagg/cli.hpp"

int main(int argc, char** argv) { return memagg::cli::run(argc, argv, std::cout, std::cerr); }
