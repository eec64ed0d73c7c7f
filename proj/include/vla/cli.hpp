#pragma once

#include <atomic>
#include <ostream>

namespace vla {

/// Set by SIGINT/SIGTERM; `run` finishes the images in flight, flushes the audit log and
/// transcript, and exits 2. `serve-mock` shuts down.
std::atomic<bool>& stop_flag();

/// Entry point of the `vla` binary. Exit codes: 0 ok, 1 fatal error, 2 partial (failed or
/// interrupted images, protocol violations).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vla
