#include <iostream>

#include "stformer/commands.hpp"

int main(int argc, char** argv) {
  return stf::run_cli(argc, argv, std::cout, std::cerr);
}
