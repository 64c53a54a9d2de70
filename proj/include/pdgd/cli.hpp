#pragma once

#include <iosfwd>

namespace pdgd {

// Entry point of the `pdgd` tool. Returns 0 on success, 1 on usage errors and
// 2 on data or validation errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pdgd
