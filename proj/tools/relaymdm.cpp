#include <iostream>

#include "relay/cli.hpp"

int main(int argc, char** argv) {
  return relay::dispatch(argc, argv, std::cout, std::cerr);
}
