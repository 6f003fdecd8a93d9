#include <vector>

#include "sketchalign/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return sketchalign::run_cli(args);
}
