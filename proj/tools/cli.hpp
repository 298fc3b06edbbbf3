#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace podo::cli {

// Runs one podo command line. Returns 0 on success, 1 on a domain error and
// 2 on a usage error. JSON documents go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace podo::cli
