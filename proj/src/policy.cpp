#include "clare/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace clare {

ActionNormalizer ActionNormalizer::identity(int action_dim) {
    ActionNormalizer n;
    n.lo.assign(action_dim, -1.0);
    n.hi.assign(action_dim, 1.0);
    return n;
}

ActionNormalizer ActionNormalizer::fit(const std::vector<const Dataset*>& datasets,
                                       int action_dim) {
    ActionNormalizer n;
    n.lo.assign(action_dim, 1e300);
    n.hi.assign(action_dim, -1e300);
    for (const Dataset* ds : datasets)
        for (const auto& ep : ds->episodes)
            for (const auto& a : ep.actions)
                for (int d = 0; d < action_dim; ++d) {
                    n.lo[d] = std::min(n.lo[d], a[d]);
                    n.hi[d] = std::max(n.hi[d], a[d]);
                }
    for (int d = 0; d < action_dim; ++d) {
        if (!(n.hi[d] > n.lo[d] + 1e-9)) {  // degenerate dimension
            n.lo[d] -= 0.5;
            n.hi[d] += 0.5;
        }
    }
    return n;
}

PolicyModel PolicyModel::init(const BackboneConfig& cfg, std::uint64_t seed) {
    PolicyModel m;
    Rng rng(derive_seed(seed, {seed_tag("backbone_init")}));
    m.net = Backbone::init(cfg, rng);
    m.norm = ActionNormalizer::identity(cfg.action_dim);
    for (int layer : cfg.expandable) {
        LayerBank b;
        b.layer = layer;
        m.banks.push_back(std::move(b));
    }
    return m;
}

bool PolicyModel::has_finalized_discriminators() const {
    for (const auto& b : banks)
        if (b.finalized_count() > 0) return true;
    return false;
}

RoutingMode PolicyModel::default_routing() const {
    return has_finalized_discriminators() ? RoutingMode::autonomous() : RoutingMode::none();
}

EncodeResult PolicyModel::encode(Tape& tape, const Tensor& obs, const RoutingMode& mode,
                                 bool capture_inputs) const {
    const auto& cfg = net.cfg;
    const bool vec = obs->shape.size() == 1;
    const int B = vec ? 1 : obs->shape[0];
    const int in_dim = vec ? obs->shape[0] : obs->shape[1];
    if (in_dim != cfg.obs_dim())
        throw ShapeError("encode: observation dim " + std::to_string(in_dim) + ", expected " +
                         std::to_string(cfg.obs_dim()));

    if (mode.kind == RoutingKind::Autonomous) {
        bool all_empty = true;
        for (const auto& b : banks) all_empty = all_empty && b.empty();
        if (all_empty)
            throw std::runtime_error("encode: autonomous routing requested with empty banks");
        if (tape.recording)
            throw std::logic_error("encode: autonomous routing is inference-only (no recording)");
    }
    if (mode.kind == RoutingKind::Forced &&
        mode.forced.size() != banks.size())
        throw std::invalid_argument("encode: forced routing needs one adapter index per layer");

    EncodeResult res;
    res.layer_inputs.resize(banks.size());
    res.selected.resize(banks.size());

    Tensor h = linear(tape, obs, net.enc_in_W, net.enc_in_b);
    std::size_t slot = 0;
    for (int bi = 0; bi < cfg.enc_blocks; ++bi) {
        const FfnBlock& blk = net.enc[bi];
        Tensor xln = layer_norm(tape, h, blk.ln_g, blk.ln_b);
        Tensor f = linear(tape, relu(tape, linear(tape, xln, blk.W1, blk.b1)), blk.W2, blk.b2);

        const bool is_expandable = slot < banks.size() && cfg.expandable[slot] == bi;
        if (is_expandable) {
            const LayerBank& bank = banks[slot];
            if (capture_inputs) res.layer_inputs[slot] = xln;
            if (mode.kind == RoutingKind::Forced) {
                const int idx = mode.forced[slot];
                if (idx >= 0) {
                    if (idx >= bank.adapter_count())
                        throw std::out_of_range("encode: forced adapter index " +
                                                std::to_string(idx) + " out of range for layer " +
                                                std::to_string(bank.layer));
                    f = add(tape, f, adapter_apply(tape, bank.adapters[idx], xln));
                }
                res.selected[slot].assign(B, idx >= 0 ? idx : -1);
            } else if (mode.kind == RoutingKind::Autonomous && bank.finalized_count() > 0) {
                const int d = cfg.enc_width;
                std::vector<int> sel(B, -1);
                Tensor contrib = tensor({B, d}, 0.0);
                bool any = false;
                for (int i = 0; i < B; ++i) {
                    const double* xrow = xln->value.data() + static_cast<std::size_t>(i) * d;
                    sel[i] = route(bank, xrow, d).adapter;
                    if (sel[i] >= 0) {
                        const auto y = adapter_forward(bank.adapters[sel[i]], xrow, d);
                        double* crow = contrib->value.data() + static_cast<std::size_t>(i) * d;
                        for (int j = 0; j < d; ++j) crow[j] = y[j];
                        any = true;
                    }
                }
                if (any) f = add(tape, f, contrib);
                res.selected[slot] = std::move(sel);
            } else {
                // No routable modules yet (empty bank or all stats pending).
                res.selected[slot].assign(B, -1);
            }
            ++slot;
        }
        h = add(tape, h, f);
    }
    res.feature = h;
    return res;
}

Tensor PolicyModel::vector_field(Tape& tape, const Tensor& feature, const Tensor& a_s,
                                 const Tensor& t_emb) const {
    Tensor g = linear(tape, concat(tape, {feature, a_s, t_emb}), net.dec_in_W, net.dec_in_b);
    for (const FfnBlock& blk : net.dec) {
        Tensor xln = layer_norm(tape, g, blk.ln_g, blk.ln_b);
        Tensor f = linear(tape, relu(tape, linear(tape, xln, blk.W1, blk.b1)), blk.W2, blk.b2);
        g = add(tape, g, f);
    }
    return linear(tape, g, net.out_W, net.out_b);
}

std::vector<double> euler_integrate(std::vector<double> a, int K, const FieldFn& field) {
    if (K < 1) throw std::invalid_argument("euler_integrate: K must be >= 1");
    const double ds = 1.0 / static_cast<double>(K);
    for (int k = 0; k < K; ++k) {
        const double s = static_cast<double>(k) / static_cast<double>(K);
        const auto v = field(a, s);
        if (v.size() != a.size())
            throw ShapeError("euler_integrate: field output size " + std::to_string(v.size()) +
                             " vs state size " + std::to_string(a.size()));
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] += ds * v[i];
            if (!std::isfinite(a[i]))
                throw NumericsError("euler_integrate: non-finite state at step " +
                                    std::to_string(k));
        }
    }
    return a;
}

ActionChunk PolicyModel::sample_chunk(const std::vector<double>& obs, int K, Rng& rng,
                                      const RoutingMode& mode) const {
    const auto& cfg = net.cfg;
    Tape tape;
    tape.recording = false;
    Tensor obs_t = tensor({1, cfg.obs_dim()}, obs);
    const EncodeResult enc = encode(tape, obs_t, mode, false);

    const int cd = cfg.chunk_dim();
    std::vector<double> a0(cd);
    for (auto& v : a0) v = rng.gaussian();

    const Tensor feature = enc.feature;
    auto field = [this, &feature, cd, &cfg](const std::vector<double>& a, double s) {
        Tape t;
        t.recording = false;
        Tensor at = tensor({1, cd}, a);
        Tensor emb = tensor({1, cfg.time_embed_dim}, time_embedding(s, cfg.time_embed_dim));
        return vector_field(t, feature, at, emb)->value;
    };
    const auto a1 = euler_integrate(std::move(a0), K, field);

    ActionChunk chunk;
    chunk.horizon = cfg.horizon;
    chunk.action_dim = cfg.action_dim;
    chunk.actions.resize(static_cast<std::size_t>(cd));
    for (int t = 0; t < cfg.horizon; ++t)
        for (int d = 0; d < cfg.action_dim; ++d) {
            const std::size_t i = static_cast<std::size_t>(t) * cfg.action_dim + d;
            chunk.actions[i] = norm.denormalize(a1[i], d);
        }
    return chunk;
}

std::vector<std::pair<std::string, Tensor>> PolicyModel::named_parameters() const {
    auto out = net.named_parameters();
    for (const auto& bank : banks) {
        for (const auto& a : bank.adapters) {
            out.emplace_back(a.W_down->name, a.W_down);
            out.emplace_back(a.W_up->name, a.W_up);
        }
        for (const auto& d : bank.discriminators) {
            out.emplace_back(d.W_enc->name, d.W_enc);
            out.emplace_back(d.W_dec->name, d.W_dec);
        }
    }
    return out;
}

FlowDraws draw_flow(Rng& rng, int batch, int chunk_dim) {
    FlowDraws d;
    d.s.resize(batch);
    d.a0.resize(static_cast<std::size_t>(batch) * chunk_dim);
    for (int i = 0; i < batch; ++i) {
        d.s[i] = rng.uniform();
        double* row = d.a0.data() + static_cast<std::size_t>(i) * chunk_dim;
        for (int j = 0; j < chunk_dim; ++j) row[j] = rng.gaussian();
    }
    return d;
}

Tensor flow_loss(Tape& tape, const PolicyModel& m, const FlowBatch& batch, const FlowDraws& draws,
                 const RoutingMode& mode) {
    if (batch.size < 1) throw std::invalid_argument("flow_loss: empty batch");
    const auto& cfg = m.net.cfg;
    const int B = batch.size;
    const int cd = cfg.chunk_dim();
    if (static_cast<int>(draws.s.size()) != B ||
        draws.a0.size() != static_cast<std::size_t>(B) * cd)
        throw ShapeError("flow_loss: draws do not match batch size");

    // Interpolants and regression targets are data, not graph nodes.
    Tensor a_s = tensor({B, cd});
    Tensor target = tensor({B, cd});
    Tensor t_emb = tensor({B, cfg.time_embed_dim});
    for (int i = 0; i < B; ++i) {
        const double s = draws.s[i];
        const double* a0 = draws.a0.data() + static_cast<std::size_t>(i) * cd;
        const double* a1 = batch.chunks->value.data() + static_cast<std::size_t>(i) * cd;
        double* as_row = a_s->value.data() + static_cast<std::size_t>(i) * cd;
        double* tg_row = target->value.data() + static_cast<std::size_t>(i) * cd;
        for (int j = 0; j < cd; ++j) {
            as_row[j] = (1.0 - s) * a0[j] + s * a1[j];
            tg_row[j] = a1[j] - a0[j];
        }
        const auto emb = time_embedding(s, cfg.time_embed_dim);
        std::copy(emb.begin(), emb.end(),
                  t_emb->value.begin() + static_cast<std::size_t>(i) * cfg.time_embed_dim);
    }

    const EncodeResult enc = m.encode(tape, batch.obs, mode, false);
    Tensor v = m.vector_field(tape, enc.feature, a_s, t_emb);
    return mean_all(tape, rows_l2_norm(tape, sub(tape, v, target)));
}

WindowSampler::WindowSampler(std::vector<const Dataset*> sources) {
    for (const Dataset* ds : sources) {
        for (std::size_t e = 0; e < ds->episodes.size(); ++e) {
            const auto& ep = ds->episodes[e];
            if (ep.actions.empty()) continue;
            spans_.push_back({ds, static_cast<int>(e), total_});
            total_ += ep.actions.size();
        }
    }
    if (total_ == 0) throw std::invalid_argument("WindowSampler: no training windows");
}

WindowRef WindowSampler::sample(Rng& rng) const {
    const std::size_t u = rng.below(total_);
    // Find the span containing window u.
    std::size_t lo = 0, hi = spans_.size();
    while (lo + 1 < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (spans_[mid].begin <= u) lo = mid;
        else hi = mid;
    }
    const Span& sp = spans_[lo];
    sp.ds->access_count += 1;
    return {sp.ds, sp.episode, static_cast<int>(u - sp.begin)};
}

FlowBatch assemble_batch(const std::vector<WindowRef>& refs, const BackboneConfig& cfg,
                         const ActionNormalizer& norm) {
    const int B = static_cast<int>(refs.size());
    FlowBatch fb;
    fb.size = B;
    fb.obs = tensor({B, cfg.obs_dim()});
    fb.chunks = tensor({B, cfg.chunk_dim()});
    for (int i = 0; i < B; ++i) {
        const auto& r = refs[i];
        const Episode& ep = r.ds->episodes[r.episode];
        const auto& o = ep.observations[r.t];
        std::copy(o.begin(), o.end(),
                  fb.obs->value.begin() + static_cast<std::size_t>(i) * cfg.obs_dim());
        double* chunk = fb.chunks->value.data() + static_cast<std::size_t>(i) * cfg.chunk_dim();
        const int T = ep.length();
        for (int t = 0; t < cfg.horizon; ++t) {
            const auto& a = ep.actions[std::min(r.t + t, T - 1)];  // repeat final action
            for (int d = 0; d < cfg.action_dim; ++d)
                chunk[t * cfg.action_dim + d] = norm.normalize(a[d], d);
        }
    }
    return fb;
}

void set_requires_grad(const std::vector<Tensor>& params, bool value) {
    for (const auto& p : params) p->requires_grad = value;
}

double TrainStats::mean_first_tenth() const {
    if (losses.empty()) return 0.0;
    const std::size_t n = std::max<std::size_t>(1, losses.size() / 10);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += losses[i];
    return s / n;
}

double TrainStats::mean_last_tenth() const {
    if (losses.empty()) return 0.0;
    const std::size_t n = std::max<std::size_t>(1, losses.size() / 10);
    double s = 0.0;
    for (std::size_t i = losses.size() - n; i < losses.size(); ++i) s += losses[i];
    return s / n;
}

TrainStats train_flow(PolicyModel& m, const BatchProvider& provider,
                      const std::vector<Tensor>& trainable, const RoutingMode& mode,
                      const TrainOptions& opt, const std::function<void(int, double)>& on_step) {
    TrainStats stats;
    stats.losses.reserve(opt.steps);
    set_requires_grad(trainable, true);
    Adam adam(trainable, {opt.lr});
    Rng rng(opt.seed);
    Tape tape;
    const int cd = m.net.cfg.chunk_dim();
    try {
        for (int step = 0; step < opt.steps; ++step) {
            if (opt.cosine) adam.set_lr(cosine_lr(opt.lr, step, opt.steps));
            tape.reset();
            const auto refs = provider(rng, opt.batch);
            const FlowBatch fb = assemble_batch(refs, m.net.cfg, m.norm);
            const FlowDraws draws = draw_flow(rng, fb.size, cd);
            Tensor loss = flow_loss(tape, m, fb, draws, mode);
            const double lv = loss->value[0];
            if (!std::isfinite(lv))
                throw NumericsError("flow loss became non-finite at step " + std::to_string(step));
            adam.zero_grad();
            tape.backward(loss);
            adam.step();
            stats.losses.push_back(lv);
            if (on_step) on_step(step, lv);
        }
    } catch (...) {
        set_requires_grad(trainable, false);
        throw;
    }
    set_requires_grad(trainable, false);
    return stats;
}

PolicyModel pretrain(const std::vector<Dataset>& datasets, const PretrainOptions& opt,
                     TrainStats* stats, const std::function<void(int, double)>& on_step) {
    if (datasets.empty()) throw std::invalid_argument("pretrain: no datasets");
    PolicyModel m = PolicyModel::init(opt.cfg, opt.seed);
    std::vector<const Dataset*> sources;
    for (const auto& d : datasets) sources.push_back(&d);
    m.norm = ActionNormalizer::fit(sources, opt.cfg.action_dim);

    WindowSampler sampler(sources);
    BatchProvider provider = [&sampler](Rng& rng, int batch) {
        std::vector<WindowRef> refs(batch);
        for (auto& r : refs) r = sampler.sample(rng);
        return refs;
    };
    TrainOptions topt;
    topt.steps = opt.steps;
    topt.batch = opt.batch;
    topt.lr = opt.lr;
    topt.cosine = true;
    topt.seed = derive_seed(opt.seed, {seed_tag("pretrain")});
    TrainStats s = train_flow(m, provider, m.backbone_parameters(), RoutingMode::none(), topt,
                              on_step);
    if (stats) *stats = std::move(s);
    return m;
}

}  // namespace clare
