#pragma once

#include <string>
#include <vector>

namespace gcg {

/// Entry point behind main(). Exit codes: 0 success, 1 usage error,
/// 2 configuration/data/IO error, 3 numeric failure (NaN abort).
int cli_main(int argc, const char* const* argv);
int cli_main(const std::vector<std::string>& args); // args without argv[0]

} // namespace gcg
