#include "nplda/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return nplda::run_cli(argc, argv, std::cout, std::cerr); }
