#include <iostream>

#include "penet/cli.hpp"

int main(int argc, char** argv) {
  return penet::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
