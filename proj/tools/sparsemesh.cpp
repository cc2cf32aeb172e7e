#include <iostream>

#include "cli.hpp"
#include "smesh/runtime.hpp"

int main(int argc, char** argv) {
  smesh::tune_allocator();
  return smesh::run_cli(argc, argv, std::cout, std::cerr);
}
