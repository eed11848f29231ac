#include <iostream>

#include "oarseg/cli.hpp"

int main(int argc, char** argv) { return oarseg::run(argc, argv, std::cout, std::cerr); }
