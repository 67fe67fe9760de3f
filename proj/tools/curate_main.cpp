#include <iostream>

#include "curate/cli.hpp"

int main(int argc, char** argv) { return curate::run_cli({argv + 1, argv + argc}, std::cout, std::cerr); }
