#include <iostream>

#include "metagnn/cli.hpp"

int main(int argc, char** argv) { return metagnn::run(argc, argv, std::cout, std::cerr); }
