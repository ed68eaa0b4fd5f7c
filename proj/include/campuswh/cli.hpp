#pragma once

#include <iosfwd>

namespace cwh {

/// Runs one campuswh command line. Returns the process exit status:
/// 0 on success, 1 on a failed operation, 2 on a usage error.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cwh
