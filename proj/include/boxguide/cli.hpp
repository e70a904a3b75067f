#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>

namespace boxguide::cli {

/// Bad user input: exit code 1.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs the `boxguide` command line. Returns 0 on success, 1 on input or
/// validation errors, 2 on internal errors (after writing a dump file).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Default model files shipped in the source tree.
std::string default_stack_path();
std::string default_boxnet_path();

}  // namespace boxguide::cli
