#include <iostream>
#include <string>
#include <vector>

#include "design_lab/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return design_lab::dispatch(args, std::cout, std::cerr);
}
