#include <iostream>

#include "airr/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return airr::cli::dispatch(args, std::cout, std::cerr);
}
