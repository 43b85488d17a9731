#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "clare/policy.hpp"

#include "json.hpp"

namespace clare {

struct StageConfig {
    double gamma = 2.5;
    int adapter_rank = 16;
    int disc_bottleneck = 16;
    int adapter_steps = 3000;
    int disc_steps = 500;
    int batch = 32;
    double adapter_lr = 1e-4;  // cosine schedule
    double disc_lr = 5e-4;     // constant
    double init_std = 0.02;
    std::uint64_t seed = 1;  // per-stage streams are derived from (seed, stage)
};

struct LayerDecision {
    int layer = 0;
    bool expanded = false;
    bool forced_fallback = false;  // expanded only via the shallowest-layer rule
    std::vector<double> zscores;   // one per pre-existing discriminator
    int linked_adapter = -1;       // adapter the new discriminator points at
};

struct StageReport {
    int stage = 0;
    std::vector<LayerDecision> layers;
    long new_params = 0;
    long base_params = 0;
    double fraction = 0.0;  // new / base
    double adapter_loss_first = 0.0, adapter_loss_last = 0.0;
    double disc_loss_last = 0.0;

    nlohmann::json to_json() const;
};

// One batched pass over every observation in the dataset; returns the
// captured input features of each expandable layer.
std::vector<FeatureMatrix> collect_layer_features(const PolicyModel& m, const Dataset& data,
                                                  const RoutingMode& mode);

// Expansion bookkeeping for one stage, produced before any training.
struct StagePlan {
    int stage = 0;
    std::vector<LayerDecision> layers;
    std::vector<int> active;  // adapter each layer runs during this stage's training
    std::vector<Tensor> new_adapter_params;
    long new_params = 0;
};

// Steps 1-3 of a stage: feature collection, z-scores and Expand/Link
// decisions (with the shallowest-layer fallback), and module attachment.
// New adapters are exact no-ops and new discriminators cannot route yet, so
// the model's behavior is unchanged until train_stage runs.
StagePlan plan_stage(PolicyModel& m, const Dataset& data, const StageConfig& cfg);

// Phases A and B plus stats finalization; advances the stage counter.
StageReport train_stage(PolicyModel& m, const Dataset& data, const StageConfig& cfg,
                        const StagePlan& plan,
                        const std::function<void(const char*, int, double)>& on_step = {});

// One continual-learning stage on task data `data` (and nothing else):
//   1. collect layer features, routing among already-trained modules;
//   2. z-score every existing discriminator, decide Expand/Link per layer
//      (first stage always expands; if nothing expands, the shallowest
//      layer is expanded anyway);
//   3. attach a new discriminator everywhere, a new zero-init adapter where
//      expanding, auxiliary links elsewhere;
//   4. train exactly the new adapters with the flow matching loss;
//   5. train exactly the new discriminators on the refreshed features and
//      freeze their error statistics.
// Everything that existed before the stage stays bit-identical.
StageReport learn_stage(PolicyModel& m, const Dataset& data, const StageConfig& cfg,
                        const std::function<void(const char*, int, double)>& on_step = {});

}  // namespace clare
