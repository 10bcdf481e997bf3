#include "gcg/cli.hpp"

int main(int argc, char** argv) {
  return gcg::cli_main(argc, argv);
}
