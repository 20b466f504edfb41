#include <string>
#include <vector>

#include "stemf/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return stemf::cli::run(args).exit_code;
}
