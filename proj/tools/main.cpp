#include <iostream>

#include "detailfusion/cli/cli.hpp"

int main(int argc, char** argv) { return dfusion::dispatch(argc, argv, std::cout, std::cerr); }
