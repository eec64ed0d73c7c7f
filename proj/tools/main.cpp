#include <csignal>
#include <iostream>

#include "vla/cli.hpp"

namespace {

extern "C" void on_signal(int) { vla::stop_flag().store(true); }

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  return vla::run_cli(argc, argv, std::cout, std::cerr);
}
