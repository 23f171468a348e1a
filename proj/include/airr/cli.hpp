#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace airr::cli {

/// Runs one command line (without the program name). Returns the process
/// exit code: 0 success, 1 user error, 2 internal error.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Parses `category=value` or `category=value:strength`.
struct EditSpec {
  std::string category;
  std::string value;
  double strength = 1.0;
};
EditSpec parse_edit(const std::string& text);

}  // namespace airr::cli
