// config.hpp
//
// Run configuration: one JSON document holding the training, reject,
// ablation and protocol settings plus file paths.  Every key has a
// built-in default; unknown keys are rejected.  The top-level "seed"
// drives training and splitting and can be overridden by FLOWGATE_SEED.

#ifndef FLOWGATE_CONFIG_HPP
#define FLOWGATE_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "flowgate/eval.hpp"

namespace flowgate {

struct RunPaths {
    std::string train;
    std::string test;
    std::string taxonomy;
    std::string model;
    std::string out;
};

struct RunConfig {
    std::uint64_t seed = 42;
    ProtocolConfig protocol;  ///< protocol.top_n is the known/unknown split N
    RunPaths paths;
};

void to_json(nlohmann::json &j, const RunConfig &c);
void from_json(const nlohmann::json &j, RunConfig &c);

/// built-in defaults as a JSON document
nlohmann::json default_run_config_json();

/// Parses a config file on top of the defaults, then applies FLOWGATE_SEED.
RunConfig load_run_config(const std::filesystem::path &path);

/// Applies FLOWGATE_SEED when set; a malformed value throws DataError.
void apply_seed_env(RunConfig &config);

} // namespace flowgate

#endif // FLOWGATE_CONFIG_HPP
