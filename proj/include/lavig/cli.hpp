#pragma once

// The `lavig` command line: gen-data, train-vae, train-vqvae, train-vdit,
// finetune-ar, sample, rollout, eval, report.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or missing-dependency error.

#include <string>
#include <vector>

namespace lavig::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// args excludes the program name.
int run(const std::vector<std::string>& args);
int main(int argc, char** argv);

}  // namespace lavig::cli
