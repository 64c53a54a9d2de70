#include <iostream>

#include "pdgd/cli.hpp"

int main(int argc, char** argv) { return pdgd::run_cli(argc, argv, std::cout, std::cerr); }
