#include <iostream>

#include "moca/cli.hpp"

int main(int argc, char **argv) {
  return moca::cli::run(argc, argv, std::cout, std::cerr);
}
