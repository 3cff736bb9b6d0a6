#include "randla/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return randla::run_cli(argc, argv, std::cout, std::cerr); }
