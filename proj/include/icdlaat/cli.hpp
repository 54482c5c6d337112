#pragma once

namespace icdlaat {

/// Command-line entry point. Returns the process exit code:
/// 0 success, 1 runtime failure, 2 usage/config error.
int run_cli(int argc, const char* const* argv);

} // namespace icdlaat
