#pragma once

#include <iosfwd>

namespace smesh {

/// Runs the sparsemesh command line. Returns 0 on success, 1 on runtime
/// failure and 2 on usage errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace smesh
