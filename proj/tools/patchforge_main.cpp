#include <string>
#include <vector>

#include "patchforge/cli.hpp"

int main(int argc, char** argv) {
  return patchforge::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
