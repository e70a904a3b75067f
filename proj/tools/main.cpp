#include "boxguide/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return boxguide::cli::run(argc, argv, std::cout, std::cerr); }
