#include <iostream>

#include "ovc/cli.hpp"

int main(int argc, char** argv) { return ovc::cli::main_entry(argc, argv, std::cout, std::cerr); }
