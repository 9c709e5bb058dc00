#pragma once

namespace mqn {

/// Runs one command-line invocation. Returns 0 on success, 1 on I/O or format
/// errors and 2 on usage errors; diagnostics go to stderr.
int dispatch(int argc, const char* const* argv);

} // namespace mqn
