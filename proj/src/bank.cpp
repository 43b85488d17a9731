#include "clare/bank.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace clare {

namespace {

// Bias-free linear on the tape: x [B,k] * W [n,k]^T. A fresh non-grad zero
// bias is cheap at these sizes.
Tensor linear_nobias(Tape& tape, const Tensor& x, const Tensor& W) {
    Tensor b = tensor({W->shape[0]}, 0.0, false);
    return linear(tape, x, W, b);
}

}  // namespace

Adapter make_adapter(int layer, int index, int stage, int dim, int rank, double init_std,
                     Rng& rng) {
    Adapter a;
    a.layer = layer;
    a.index = index;
    a.created_stage = stage;
    a.W_down = gaussian_tensor({rank, dim}, rng, init_std, false,
                               "bank" + std::to_string(layer) + ".a" + std::to_string(index) +
                                   ".Wdown");
    a.W_up = tensor({dim, rank}, 0.0, false);
    a.W_up->name = "bank" + std::to_string(layer) + ".a" + std::to_string(index) + ".Wup";
    return a;
}

std::vector<double> adapter_forward(const Adapter& a, const double* x, int dim) {
    if (a.W_down->shape[1] != dim)
        throw ShapeError("adapter_forward: input dim " + std::to_string(dim) + " vs " +
                         shape_str(a.W_down->shape));
    const int rank = a.W_down->shape[0];
    std::vector<double> h(rank, 0.0);
    for (int r = 0; r < rank; ++r) {
        const double* wrow = a.W_down->value.data() + static_cast<std::size_t>(r) * dim;
        double acc = 0.0;
        for (int j = 0; j < dim; ++j) acc += wrow[j] * x[j];
        h[r] = acc > 0.0 ? acc : 0.0;
    }
    std::vector<double> y(dim, 0.0);
    for (int j = 0; j < dim; ++j) {
        const double* wrow = a.W_up->value.data() + static_cast<std::size_t>(j) * rank;
        double acc = 0.0;
        for (int r = 0; r < rank; ++r) acc += wrow[r] * h[r];
        y[j] = acc;
    }
    return y;
}

Tensor adapter_apply(Tape& tape, const Adapter& a, const Tensor& x) {
    Tensor h = relu(tape, linear_nobias(tape, x, a.W_down));
    return linear_nobias(tape, h, a.W_up);
}

double recon_error(const Discriminator& d, const double* x, int dim) {
    if (d.W_enc->shape[1] != dim)
        throw ShapeError("recon_error: input dim " + std::to_string(dim) + " vs " +
                         shape_str(d.W_enc->shape));
    const int rb = d.W_enc->shape[0];
    std::vector<double> h(rb, 0.0);
    for (int r = 0; r < rb; ++r) {
        const double* wrow = d.W_enc->value.data() + static_cast<std::size_t>(r) * dim;
        double acc = 0.0;
        for (int j = 0; j < dim; ++j) acc += wrow[j] * x[j];
        h[r] = acc > 0.0 ? acc : 0.0;
    }
    double err2 = 0.0;
    for (int j = 0; j < dim; ++j) {
        const double* wrow = d.W_dec->value.data() + static_cast<std::size_t>(j) * rb;
        double acc = 0.0;
        for (int r = 0; r < rb; ++r) acc += wrow[r] * h[r];
        const double diff = x[j] - acc;
        err2 += diff * diff;
    }
    return std::sqrt(err2);
}

Discriminator make_discriminator(int layer, int stage, int dim, int bottleneck, double init_std,
                                 Rng& rng) {
    Discriminator d;
    d.layer = layer;
    d.stage = stage;
    // Encoder rows come in +/- pairs: without biases a purely random init can
    // leave every ReLU unit dead on the feature cluster the discriminator is
    // supposed to learn, and a fully dead bottleneck never recovers.
    d.W_enc = tensor({bottleneck, dim}, 0.0);
    d.W_enc->name =
        "bank" + std::to_string(layer) + ".d" + std::to_string(stage) + ".Wenc";
    for (int r = 0; r < bottleneck; ++r) {
        double* row = d.W_enc->value.data() + static_cast<std::size_t>(r) * dim;
        if (r % 2 == 1) {
            const double* prev = row - dim;
            for (int j = 0; j < dim; ++j) row[j] = -prev[j];
        } else {
            for (int j = 0; j < dim; ++j) row[j] = init_std * rng.gaussian();
        }
    }
    d.W_dec = gaussian_tensor({dim, bottleneck}, rng, init_std, false,
                              "bank" + std::to_string(layer) + ".d" + std::to_string(stage) +
                                  ".Wdec");
    return d;
}

Tensor recon_error_rows(Tape& tape, const Discriminator& d, const Tensor& x) {
    Tensor h = relu(tape, linear_nobias(tape, x, d.W_enc));
    Tensor rec = linear_nobias(tape, h, d.W_dec);
    return rows_l2_norm(tape, sub(tape, x, rec));
}

int LayerBank::finalized_count() const {
    int n = 0;
    for (const auto& d : discriminators)
        if (d.finalized) ++n;
    return n;
}

RouteResult route(const LayerBank& bank, const double* x, int dim) {
    return token_route(bank, {x}, dim);
}

RouteResult token_route(const LayerBank& bank, const std::vector<const double*>& xs, int dim) {
    if (bank.empty()) throw std::runtime_error("route: empty bank for layer");
    if (xs.empty()) throw std::invalid_argument("token_route: no feature vectors");
    RouteResult best;
    double best_err = 0.0;
    for (int j = 0; j < bank.discriminator_count(); ++j) {
        const auto& d = bank.discriminators[j];
        if (!d.finalized) continue;
        double mean_err = 0.0;
        for (const double* x : xs) mean_err += recon_error(d, x, dim);
        mean_err /= static_cast<double>(xs.size());
        if (best.discriminator < 0 || mean_err < best_err) {
            best_err = mean_err;
            best.discriminator = j;
            best.adapter = bank.link[j];
        }
    }
    if (best.discriminator < 0)
        throw std::runtime_error("route: no finalized discriminators in layer bank");
    return best;
}

double zscore(const Discriminator& d, const FeatureMatrix& xs) {
    if (!d.finalized) throw std::logic_error("zscore: discriminator stats not finalized");
    if (xs.count < 1) throw std::invalid_argument("zscore: empty feature set");
    double acc = 0.0;
    for (int i = 0; i < xs.count; ++i)
        acc += (recon_error(d, xs.row(i), xs.dim) - d.mu) / d.sigma;
    return acc / static_cast<double>(xs.count);
}

void finalize_stats(Discriminator& d, const FeatureMatrix& xs) {
    if (xs.count < 1) throw std::invalid_argument("finalize_stats: empty feature set");
    std::vector<double> errs(xs.count);
    double mean = 0.0;
    for (int i = 0; i < xs.count; ++i) {
        errs[i] = recon_error(d, xs.row(i), xs.dim);
        mean += errs[i];
    }
    mean /= xs.count;
    double var = 0.0;
    for (double e : errs) var += (e - mean) * (e - mean);
    var /= xs.count;  // population convention
    d.mu = mean;
    d.sigma = std::max(std::sqrt(var), 1e-8);
    d.finalized = true;
}

ExpandDecision decide_expansion(const std::vector<double>& zscores, double gamma, int stage) {
    if (stage < 1) throw std::invalid_argument("decide_expansion: stage must be >= 1");
    if (stage == 1) return ExpandDecision::Expand;
    // gamma = 0 is the expand-always setting: z-scores are standardized means
    // and can be <= 0 when new features reconstruct better than the training
    // average, so a literal z > 0 test would not deliver it.
    if (gamma == 0.0) return ExpandDecision::Expand;
    if (zscores.empty())
        throw std::invalid_argument("decide_expansion: no z-scores for stage > 1");
    for (double z : zscores)
        if (!(z > gamma)) return ExpandDecision::Link;
    return ExpandDecision::Expand;
}

int link_auxiliary(const LayerBank& bank, const FeatureMatrix& xs) {
    if (bank.discriminators.empty())
        throw std::logic_error("link_auxiliary: no existing discriminators");
    if (xs.count < 1) throw std::invalid_argument("link_auxiliary: empty feature set");
    int best_j = -1;
    double best_err = 0.0;
    for (int j = 0; j < bank.discriminator_count(); ++j) {
        const auto& d = bank.discriminators[j];
        if (!d.finalized) continue;  // the stage-n discriminator itself is still in training
        double mean_err = 0.0;
        for (int i = 0; i < xs.count; ++i) mean_err += recon_error(d, xs.row(i), xs.dim);
        mean_err /= xs.count;
        if (best_j < 0 || mean_err < best_err) {
            best_err = mean_err;
            best_j = j;
        }
    }
    if (best_j < 0) throw std::logic_error("link_auxiliary: no finalized discriminators");
    return bank.link[best_j];
}

}  // namespace clare
