#include "coarea/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return coarea::cli::run(argc, argv, std::cout, std::cerr); }
