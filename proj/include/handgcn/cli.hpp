#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace handgcn {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitData = 2,
    kExitNumerical = 3,
};

/// Entry point of the `handgcn` tool. `args` excludes the program name.
/// Subcommands: synth, preprocess, train, crossval, eval, predict.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace handgcn
