#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace stnlab::cli {

/// Runs one `stnlab` invocation (args exclude the program name). Results go
/// to `out`; progress and machine-readable errors go to `err`. Returns the
/// process exit code: 0 on success, 1 on runtime errors, 2 on usage errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stnlab::cli
