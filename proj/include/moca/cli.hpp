#pragma once

// The experiment runner behind the `moca` executable. Exit codes: 0 success,
// 1 usage, configuration or file error, 2 numerical failure.

#include <iosfwd>
#include <string>

namespace moca::cli {

std::string version_string();

int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace moca::cli
