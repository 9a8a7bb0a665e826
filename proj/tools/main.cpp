#include <iostream>

#include "fiqa/cli.hpp"

int main(int argc, char** argv) { return fiqa::run_cli(argc, argv, std::cout, std::cerr); }
