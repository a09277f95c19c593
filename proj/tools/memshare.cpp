#include <iostream>
#include <string>
#include <vector>

#include "memshare/cli.h"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return memshare::run_cli(args, std::cout, std::cerr);
}
