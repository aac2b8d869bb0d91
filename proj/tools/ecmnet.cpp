#include <iostream>

#include "ecm/cli.hpp"

int main(int argc, char** argv) { return ecm::run_cli(argc, argv, std::cout, std::cerr); }
