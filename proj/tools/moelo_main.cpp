#include <iostream>

#include "moelo/cli/app.hpp"

int main(int argc, char** argv) { return moelo::cli::run_cli(argc, argv, std::cout, std::cerr); }
