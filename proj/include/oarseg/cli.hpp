#pragma once

#include <iosfwd>

namespace oarseg {

// Entry point of the `oarseg` tool. Returns the process exit code; failures
// print a single "error: <Kind>: <message>" line on `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace oarseg
