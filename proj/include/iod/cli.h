#ifndef IOD_CLI_H_
#define IOD_CLI_H_

#include <iostream>

namespace iod {

// Runs one subcommand. Returns 0 on success, 1 on domain errors, and 2 on
// usage errors; diagnostics go to `err`.
int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
             std::ostream& err = std::cerr);

}  // namespace iod

#endif  // IOD_CLI_H_
