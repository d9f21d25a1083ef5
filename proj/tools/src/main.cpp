// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "leafnet/parallel.hpp"
#include "leafnet_cli/cli.hpp"

int main(int argc, char** argv) {
  leafnet::retain_freed_memory();
  return leafnet::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
