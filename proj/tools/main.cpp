#include <iostream>

#include "nmaout/cli.hpp"

int main(int argc, char** argv) { return nmaout::cli_main(argc, argv, std::cout, std::cerr); }
