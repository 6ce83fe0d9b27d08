#include <iostream>

#include "vidseq/cli.hpp"

int main(int argc, char** argv) {
  return vidseq::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
