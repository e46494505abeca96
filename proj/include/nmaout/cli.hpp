#pragma once

#include <iosfwd>

namespace nmaout {

// Command-line entry point. Exit codes: 0 success, 1 invalid input or usage,
// 2 sampler diagnostic failure.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nmaout
