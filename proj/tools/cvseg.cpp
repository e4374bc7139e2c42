#include <iostream>

#include "cvseg/cli.hpp"

int main(int argc, char** argv) {
  return cvseg::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
