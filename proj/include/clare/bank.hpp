#pragma once

#include <cstdint>
#include <vector>

#include "clare/rng.hpp"
#include "clare/tensor.hpp"

namespace clare {

// Row-major feature block captured at one expandable layer.
struct FeatureMatrix {
    int dim = 0;
    int count = 0;
    std::vector<double> data;  // count * dim

    const double* row(int i) const { return data.data() + static_cast<std::size_t>(i) * dim; }
    void append(const double* x) { data.insert(data.end(), x, x + dim); ++count; }
};

// Bottleneck side branch: W_up * ReLU(W_down * x). A fresh adapter has W_up
// zeroed so inserting it leaves the host layer's output untouched until it is
// trained.
struct Adapter {
    Tensor W_down;  // [rank, dim]
    Tensor W_up;    // [dim, rank]
    int layer = 0;
    int index = 0;          // position in the bank
    int created_stage = 0;  // 1-based
};

Adapter make_adapter(int layer, int index, int stage, int dim, int rank, double init_std,
                     Rng& rng);
// Single-vector forward, no autodiff.
std::vector<double> adapter_forward(const Adapter& a, const double* x, int dim);
// Batched forward on the tape ([B, dim] -> [B, dim]); used during training.
Tensor adapter_apply(Tape& tape, const Adapter& a, const Tensor& x);

// Per-stage autoencoder over a layer's input features. Its reconstruction
// error measures how familiar a feature vector is; mu/sigma normalize that
// error across discriminators trained on different data.
struct Discriminator {
    Tensor W_enc;  // [bottleneck, dim]
    Tensor W_dec;  // [dim, bottleneck]
    int layer = 0;
    int stage = 0;  // 1-based creation stage
    double mu = 0.0;
    double sigma = 0.0;
    bool finalized = false;
};

Discriminator make_discriminator(int layer, int stage, int dim, int bottleneck, double init_std,
                                 Rng& rng);
// e(x) = || x - W_dec * ReLU(W_enc * x) ||_2
double recon_error(const Discriminator& d, const double* x, int dim);
// Row-wise reconstruction errors on the tape, [B, dim] -> [B]; used to train
// new discriminators.
Tensor recon_error_rows(Tape& tape, const Discriminator& d, const Tensor& x);

// Everything attached to one expandable layer. `link[j]` maps discriminator j
// to its adapter; the map is total on discriminators and surjective onto
// adapters. Modules from earlier stages are frozen.
struct LayerBank {
    int layer = 0;
    std::vector<Adapter> adapters;
    std::vector<Discriminator> discriminators;
    std::vector<int> link;

    int adapter_count() const { return static_cast<int>(adapters.size()); }
    int discriminator_count() const { return static_cast<int>(discriminators.size()); }
    int finalized_count() const;
    bool empty() const { return adapters.empty() && discriminators.empty(); }
};

struct RouteResult {
    int adapter = -1;
    int discriminator = -1;
};

// argmin over finalized discriminators' reconstruction errors; ties go to the
// oldest (smallest index). Discriminators still in training never route.
RouteResult route(const LayerBank& bank, const double* x, int dim);
// Same selection over a set of vectors, aggregating errors by mean.
RouteResult token_route(const LayerBank& bank, const std::vector<const double*>& xs, int dim);

// Mean standardized reconstruction error of a feature set under a finalized
// discriminator; the layer-expansion test compares this against gamma.
double zscore(const Discriminator& d, const FeatureMatrix& xs);

// Freeze mu/sigma from a full pass over the training features (population
// std, floored at 1e-8).
void finalize_stats(Discriminator& d, const FeatureMatrix& xs);

enum class ExpandDecision { Expand, Link };

// Expand iff this is the first stage or every existing discriminator finds
// the features out-of-distribution (all z-scores above gamma).
ExpandDecision decide_expansion(const std::vector<double>& zscores, double gamma, int stage);

// For a non-expanded layer: index of the adapter linked from the existing
// discriminator with the smallest mean reconstruction error on the new data.
int link_auxiliary(const LayerBank& bank, const FeatureMatrix& xs);

}  // namespace clare
