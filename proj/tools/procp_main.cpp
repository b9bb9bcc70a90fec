#include <iostream>

#include "procp/cli.hpp"

int main(int argc, char** argv) { return procp::run_cli(argc, argv, std::cout, std::cerr); }
