#include <vector>

#include "corrfuse/cli.hpp"

int main(int argc, char** argv) {
  return corrfuse::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
