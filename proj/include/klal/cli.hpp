// Command-line driver. Placeholder until subcommands land.
#pragma once

namespace klal {

inline int run_cli(int, char**) { return 0; }

}  // namespace klal
