#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "clare/backbone.hpp"

#include "json.hpp"

namespace clare {

// Invalid configuration; maps to exit code 2 in the CLI.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    // [suite]
    std::uint64_t suite_seed = 7;
    int n_pretrain = 8;
    int n_stream = 5;
    int demos_per_task = 50;
    // [model]
    BackboneConfig backbone;
    int adapter_rank = 16;
    int disc_bottleneck = 16;
    // [training]
    double gamma = 2.5;
    int pretrain_steps = 5000;
    int adapter_steps = 3000;
    int disc_steps = 500;
    int batch = 32;
    double pretrain_lr = 1e-3;
    double adapter_lr = 1e-4;
    double disc_lr = 5e-4;
    double init_std = 0.02;
    // [run]
    std::string method = "clare";  // clare | seqfft | er
    double er_buffer_fraction = 0.5;
    int eval_episodes = 40;
    std::uint64_t seed = 1;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::string out_dir = "runs";

    void validate() const;
    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    // Resolved-config echo, reloadable via load_config_ini.
    std::string to_ini() const;
};

// "inf"/"infinite" (any case) or a non-negative number.
double parse_gamma(const std::string& s);
std::string gamma_str(double gamma);

// Flat key=value INI with [suite] [model] [training] [run] sections; unknown
// keys are an error. Values already set in `cfg` act as defaults.
void load_config_ini(const std::string& path, ExperimentConfig& cfg);

}  // namespace clare
