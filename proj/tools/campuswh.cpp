#include <iostream>

#include "campuswh/cli.hpp"

int main(int argc, char** argv) { return cwh::cli_dispatch(argc, argv, std::cout, std::cerr); }
