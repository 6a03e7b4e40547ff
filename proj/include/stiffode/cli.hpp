#pragma once

#include <map>
#include <string>

namespace stiffode::cli {

using KvMap = std::map<std::string, std::string>;

/// Default configuration (all recognized keys) for a subcommand.
KvMap defaults_for(const std::string& subcommand);

/// Merge precedence: CLI overrides > config file > defaults. Unknown keys in
/// the config file or overrides are rejected. The merged map is echoed to
/// <out>/resolved_config.txt, which is itself a valid input config.
KvMap resolve_config(const std::string& subcommand,
                     const std::string& config_path, const KvMap& overrides);

int run_solve(const KvMap& cfg);
int run_reverse(const KvMap& cfg);
int run_gradcheck(const KvMap& cfg);
int run_train(const KvMap& cfg);
int run_stiffness(const KvMap& cfg);

/// Dispatch; returns the process exit code (0 ok, 2 solve failure,
/// 3 gradient disagreement, 4 training abort).
int run(const std::string& subcommand, const std::string& config_path,
        const KvMap& overrides);

}  // namespace stiffode::cli
