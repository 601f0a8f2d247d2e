#include <iostream>

#include "mseed/cli.hpp"

int main(int argc, char** argv) { return mseed::cli_main({argv, argv + argc}, std::cout, std::cerr); }
