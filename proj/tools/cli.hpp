#pragma once

namespace ustatlab::cli {

/// Entry point of the `ustatlab` binary. Exit codes: 0 success, 1 bad input
/// (one `error: ...` line on stderr), 2 a `verify` identity out of tolerance.
int run(int argc, char** argv);

}  // namespace ustatlab::cli
