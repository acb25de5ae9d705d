#pragma once

#include <ostream>

namespace blindsr {

// Entry point of the `blindsr` command. JSON log lines go to `out`, the
// human-readable summary and diagnostics to `err`.
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace blindsr
