#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ctxbench::cli {

/// Exit codes: 0 ok, 1 usage error, 2 data error, 3 runtime failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace ctxbench::cli
