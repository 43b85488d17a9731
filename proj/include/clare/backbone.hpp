#pragma once

#include <string>
#include <utility>
#include <vector>

#include "clare/rng.hpp"
#include "clare/tensor.hpp"

#include "json.hpp"

namespace clare {

// Network dimensions and sampler settings. Serialized verbatim into
// checkpoint manifests so a checkpoint is self-describing.
struct BackboneConfig {
    int proprio_dim = 4;
    int context_dim = 4;
    int instruction_dim = 16;
    int enc_width = 128;
    int enc_hidden = 256;
    int enc_blocks = 3;
    int dec_width = 128;
    int dec_hidden = 256;
    int dec_blocks = 2;
    int horizon = 16;
    int applied_actions = 8;
    int action_dim = 2;
    int time_embed_dim = 32;
    int euler_steps = 10;
    std::vector<int> expandable = {0, 1, 2};  // encoder block indices, ascending

    int obs_dim() const { return proprio_dim + context_dim + instruction_dim; }
    int chunk_dim() const { return horizon * action_dim; }
    void validate() const;

    nlohmann::json to_json() const;
    static BackboneConfig from_json(const nlohmann::json& j);
    bool operator==(const BackboneConfig&) const = default;
};

// Pre-norm residual FFN block: y = x + W2 * ReLU(W1 * LN(x)). The LN output
// is the block's input feature, which is what adapters and discriminators see.
struct FfnBlock {
    Tensor ln_g, ln_b;
    Tensor W1, b1;
    Tensor W2, b2;
};

struct Backbone {
    BackboneConfig cfg;
    Tensor enc_in_W, enc_in_b;
    std::vector<FfnBlock> enc;
    Tensor dec_in_W, dec_in_b;
    std::vector<FfnBlock> dec;
    Tensor out_W, out_b;

    static Backbone init(const BackboneConfig& cfg, Rng& rng);

    // Stable (name, tensor) enumeration; checkpoint order and optimizer
    // registration both rely on it.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;
    long parameter_count() const;
};

// Sinusoidal features of the flow time s in [0,1]; log-spaced frequencies.
std::vector<double> time_embedding(double s, int dim);

}  // namespace clare
