#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "clare/adam.hpp"
#include "clare/backbone.hpp"
#include "clare/bank.hpp"
#include "clare/tasks.hpp"

namespace clare {

struct ActionChunk {
    int horizon = 0;
    int action_dim = 0;
    std::vector<double> actions;  // horizon * action_dim, row-major

    const double* row(int t) const {
        return actions.data() + static_cast<std::size_t>(t) * action_dim;
    }
};

// Per-dimension min-max map fitted on pretraining data; training and sampling
// run in [-1,1] normalized action space.
struct ActionNormalizer {
    std::vector<double> lo, hi;

    static ActionNormalizer identity(int action_dim);
    static ActionNormalizer fit(const std::vector<const Dataset*>& datasets, int action_dim);

    double normalize(double v, int d) const { return 2.0 * (v - lo[d]) / (hi[d] - lo[d]) - 1.0; }
    double denormalize(double v, int d) const { return lo[d] + 0.5 * (v + 1.0) * (hi[d] - lo[d]); }
};

enum class RoutingKind { None, Autonomous, Forced };

// None: run the bare backbone (pretraining, empty banks, baselines).
// Autonomous: per-layer argmin over finalized discriminators (deployment).
// Forced: fixed adapter index per expandable layer, -1 for no adapter
// (stage training, diagnostics).
struct RoutingMode {
    RoutingKind kind = RoutingKind::None;
    std::vector<int> forced;

    static RoutingMode none() { return {}; }
    static RoutingMode autonomous() { return {RoutingKind::Autonomous, {}}; }
    static RoutingMode forced_to(std::vector<int> idx) {
        return {RoutingKind::Forced, std::move(idx)};
    }
};

struct EncodeResult {
    Tensor feature;                          // [B, enc_width]
    std::vector<Tensor> layer_inputs;        // per expandable slot, [B, enc_width]
    std::vector<std::vector<int>> selected;  // per slot, adapter index per row (-1 none)
};

struct PolicyModel {
    Backbone net;
    std::vector<LayerBank> banks;  // one per expandable layer
    ActionNormalizer norm;
    int stage = 0;

    static PolicyModel init(const BackboneConfig& cfg, std::uint64_t seed);

    EncodeResult encode(Tape& tape, const Tensor& obs, const RoutingMode& mode,
                        bool capture_inputs) const;
    Tensor vector_field(Tape& tape, const Tensor& feature, const Tensor& a_s,
                        const Tensor& t_emb) const;

    bool has_finalized_discriminators() const;
    // Autonomous once any routing exists, bare backbone before that.
    RoutingMode default_routing() const;

    // One routing decision from the observation, then K Euler steps.
    ActionChunk sample_chunk(const std::vector<double>& obs, int K, Rng& rng,
                             const RoutingMode& mode) const;

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> backbone_parameters() const { return net.parameters(); }
    long base_parameter_count() const { return net.parameter_count(); }
};

// da/ds = field(a, s), integrated from s=0 to s=1 in K equal steps.
using FieldFn = std::function<std::vector<double>(const std::vector<double>&, double)>;
std::vector<double> euler_integrate(std::vector<double> a0, int K, const FieldFn& field);

// ---- flow matching training -------------------------------------------------

struct FlowBatch {
    Tensor obs;     // [B, obs_dim], constant
    Tensor chunks;  // [B, chunk_dim], normalized targets, constant
    int size = 0;
};

// Frozen randomness of one loss evaluation: flow times and base noise.
struct FlowDraws {
    std::vector<double> s;   // B
    std::vector<double> a0;  // B * chunk_dim
};
FlowDraws draw_flow(Rng& rng, int batch, int chunk_dim);

Tensor flow_loss(Tape& tape, const PolicyModel& m, const FlowBatch& batch, const FlowDraws& draws,
                 const RoutingMode& mode);

// Training windows: (episode, t) with the chunk read forward from t, padded
// by repeating the final action past the episode end.
struct WindowRef {
    const Dataset* ds = nullptr;
    int episode = 0;
    int t = 0;
};

class WindowSampler {
public:
    explicit WindowSampler(std::vector<const Dataset*> sources);
    std::size_t total_windows() const { return total_; }
    WindowRef sample(Rng& rng) const;

private:
    struct Span {
        const Dataset* ds;
        int episode;
        std::size_t begin;  // cumulative window offset
    };
    std::vector<Span> spans_;
    std::size_t total_ = 0;
};

FlowBatch assemble_batch(const std::vector<WindowRef>& refs, const BackboneConfig& cfg,
                         const ActionNormalizer& norm);

void set_requires_grad(const std::vector<Tensor>& params, bool value);

using BatchProvider = std::function<std::vector<WindowRef>(Rng&, int)>;

struct TrainOptions {
    int steps = 0;
    int batch = 32;
    double lr = 1e-4;
    bool cosine = true;
    std::uint64_t seed = 0;
};

struct TrainStats {
    std::vector<double> losses;
    double mean_first_tenth() const;
    double mean_last_tenth() const;
};

// Shared loop for pretraining, adapter phases, and the fine-tuning baselines;
// they differ only in trainable set, routing, and batch provider.
TrainStats train_flow(PolicyModel& m, const BatchProvider& provider,
                      const std::vector<Tensor>& trainable, const RoutingMode& mode,
                      const TrainOptions& opt,
                      const std::function<void(int, double)>& on_step = {});

struct PretrainOptions {
    BackboneConfig cfg;
    int steps = 5000;
    int batch = 32;
    double lr = 1e-3;
    std::uint64_t seed = 1;
};

PolicyModel pretrain(const std::vector<Dataset>& datasets, const PretrainOptions& opt,
                     TrainStats* stats = nullptr,
                     const std::function<void(int, double)>& on_step = {});

}  // namespace clare
