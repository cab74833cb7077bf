#pragma once
// Command-line driver: simulate, fit, sweep, report. Exit codes: 0 success,
// 1 usage or configuration error, 2 numerical failure.

namespace fpgp::cli {

int run(int argc, const char* const* argv);

}  // namespace fpgp::cli
