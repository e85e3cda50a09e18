#include <iostream>

#include "dgkit/cli.hpp"

int main(int argc, char** argv) {
  return dgkit::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
