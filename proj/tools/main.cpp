#include <iostream>

#include "prmbas/cli.hpp"

int main(int argc, char** argv) { return prmbas::cli::run(argc, argv, std::cout, std::cerr); }
