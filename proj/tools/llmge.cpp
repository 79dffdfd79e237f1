#include <iostream>

#include "llmge/cli.hpp"

int main(int argc, char** argv) {
  return llmge::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
