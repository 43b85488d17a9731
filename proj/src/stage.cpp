#include "clare/stage.hpp"

#include <cmath>
#include <stdexcept>

namespace clare {

nlohmann::json StageReport::to_json() const {
    nlohmann::json layers_j = nlohmann::json::array();
    for (const auto& l : layers) {
        layers_j.push_back({{"layer", l.layer},
                            {"decision", l.expanded ? "expand" : "link"},
                            {"forced_fallback", l.forced_fallback},
                            {"zscores", l.zscores},
                            {"linked_adapter", l.linked_adapter}});
    }
    return {{"stage", stage},
            {"layers", layers_j},
            {"new_params", new_params},
            {"base_params", base_params},
            {"fraction", fraction},
            {"adapter_loss_first", adapter_loss_first},
            {"adapter_loss_last", adapter_loss_last},
            {"disc_loss_last", disc_loss_last}};
}

std::vector<FeatureMatrix> collect_layer_features(const PolicyModel& m, const Dataset& data,
                                                  const RoutingMode& mode) {
    const auto& cfg = m.net.cfg;
    const std::size_t total = data.total_steps();
    if (total == 0) throw std::invalid_argument("collect_layer_features: empty dataset");

    Tensor obs = tensor({static_cast<int>(total), cfg.obs_dim()});
    std::size_t row = 0;
    for (const auto& ep : data.episodes)
        for (const auto& o : ep.observations) {
            std::copy(o.begin(), o.end(),
                      obs->value.begin() + row * static_cast<std::size_t>(cfg.obs_dim()));
            ++row;
        }
    data.access_count += static_cast<long>(total);

    Tape tape;
    tape.recording = false;
    const EncodeResult enc = m.encode(tape, obs, mode, true);

    std::vector<FeatureMatrix> out(m.banks.size());
    for (std::size_t slot = 0; slot < m.banks.size(); ++slot) {
        out[slot].dim = cfg.enc_width;
        out[slot].count = static_cast<int>(total);
        out[slot].data = enc.layer_inputs[slot]->value;
    }
    return out;
}

StagePlan plan_stage(PolicyModel& m, const Dataset& data, const StageConfig& cfg) {
    if (data.episodes.empty()) throw std::invalid_argument("plan_stage: empty dataset");
    const int n = m.stage + 1;
    const auto& bb = m.net.cfg;

    StagePlan plan;
    plan.stage = n;

    // Features under the routing that exists today. New modules attached
    // below start as exact no-ops, so one sweep serves every layer.
    const auto features = collect_layer_features(m, data, m.default_routing());

    for (std::size_t slot = 0; slot < m.banks.size(); ++slot) {
        const LayerBank& bank = m.banks[slot];
        LayerDecision dec;
        dec.layer = bank.layer;
        for (const auto& disc : bank.discriminators)
            dec.zscores.push_back(zscore(disc, features[slot]));
        dec.expanded = decide_expansion(dec.zscores, cfg.gamma, n) == ExpandDecision::Expand;
        plan.layers.push_back(std::move(dec));
    }

    // At least one new adapter per stage: fall back to the shallowest layer.
    if (n > 1) {
        bool any = false;
        for (const auto& l : plan.layers) any = any || l.expanded;
        if (!any) {
            plan.layers.front().expanded = true;
            plan.layers.front().forced_fallback = true;
        }
    }

    // Attach modules. Creation order (by layer, adapter before discriminator)
    // pins the init RNG stream.
    Rng mod_rng(derive_seed(cfg.seed, {seed_tag("stage_modules"), static_cast<std::uint64_t>(n)}));
    plan.active.assign(m.banks.size(), -1);
    for (std::size_t slot = 0; slot < m.banks.size(); ++slot) {
        LayerBank& bank = m.banks[slot];
        LayerDecision& dec = plan.layers[slot];
        int target;
        if (dec.expanded) {
            const int idx = bank.adapter_count();
            bank.adapters.push_back(make_adapter(bank.layer, idx, n, bb.enc_width,
                                                 cfg.adapter_rank, cfg.init_std, mod_rng));
            plan.new_adapter_params.push_back(bank.adapters.back().W_down);
            plan.new_adapter_params.push_back(bank.adapters.back().W_up);
            plan.new_params += bank.adapters.back().W_down->size();
            plan.new_params += bank.adapters.back().W_up->size();
            target = idx;
        } else {
            target = link_auxiliary(bank, features[slot]);
        }
        bank.discriminators.push_back(make_discriminator(bank.layer, n, bb.enc_width,
                                                         cfg.disc_bottleneck, cfg.init_std,
                                                         mod_rng));
        plan.new_params += bank.discriminators.back().W_enc->size();
        plan.new_params += bank.discriminators.back().W_dec->size();
        bank.link.push_back(target);
        dec.linked_adapter = target;
        plan.active[slot] = target;
    }
    return plan;
}

StageReport train_stage(PolicyModel& m, const Dataset& data, const StageConfig& cfg,
                        const StagePlan& plan,
                        const std::function<void(const char*, int, double)>& on_step) {
    const int n = plan.stage;
    StageReport report;
    report.stage = n;
    report.layers = plan.layers;
    report.new_params = plan.new_params;
    report.base_params = m.base_parameter_count();
    report.fraction = static_cast<double>(plan.new_params) / report.base_params;

    // Phase A: only the new adapters train; each layer runs the adapter its
    // new discriminator will route to once deployed.
    const RoutingMode stage_routing = RoutingMode::forced_to(plan.active);
    {
        WindowSampler sampler({&data});
        BatchProvider provider = [&sampler](Rng& rng, int batch) {
            std::vector<WindowRef> refs(batch);
            for (auto& r : refs) r = sampler.sample(rng);
            return refs;
        };
        TrainOptions opt;
        opt.steps = cfg.adapter_steps;
        opt.batch = cfg.batch;
        opt.lr = cfg.adapter_lr;
        opt.cosine = true;
        opt.seed = derive_seed(cfg.seed, {seed_tag("phase_a"), static_cast<std::uint64_t>(n)});
        std::function<void(int, double)> adapter_log;
        if (on_step) adapter_log = [&on_step](int s, double l) { on_step("adapter", s, l); };
        const TrainStats stats =
            train_flow(m, provider, plan.new_adapter_params, stage_routing, opt, adapter_log);
        report.adapter_loss_first = stats.mean_first_tenth();
        report.adapter_loss_last = stats.mean_last_tenth();
    }

    // Phase B: refresh features once (they are static now; everything that
    // shapes them is frozen again), train each new discriminator, then freeze
    // its error statistics on the full pass.
    const auto features_b = collect_layer_features(m, data, stage_routing);
    double disc_loss_acc = 0.0;
    for (std::size_t slot = 0; slot < m.banks.size(); ++slot) {
        Discriminator& dn = m.banks[slot].discriminators.back();
        const FeatureMatrix& feats = features_b[slot];
        std::vector<Tensor> train_set = {dn.W_enc, dn.W_dec};
        set_requires_grad(train_set, true);
        Adam adam(train_set, {cfg.disc_lr});
        Rng rng(derive_seed(cfg.seed, {seed_tag("phase_b"), static_cast<std::uint64_t>(n),
                                       static_cast<std::uint64_t>(slot)}));
        Tape tape;
        double last = 0.0;
        for (int step = 0; step < cfg.disc_steps; ++step) {
            tape.reset();
            Tensor x = tensor({cfg.batch, feats.dim});
            for (int i = 0; i < cfg.batch; ++i) {
                const int r = static_cast<int>(rng.below(feats.count));
                std::copy(feats.row(r), feats.row(r) + feats.dim,
                          x->value.begin() + static_cast<std::size_t>(i) * feats.dim);
            }
            Tensor loss = mean_all(tape, recon_error_rows(tape, dn, x));
            last = loss->value[0];
            if (!std::isfinite(last)) {
                set_requires_grad(train_set, false);
                throw NumericsError("discriminator loss became non-finite at step " +
                                    std::to_string(step));
            }
            adam.zero_grad();
            tape.backward(loss);
            adam.step();
            if (on_step) on_step("discriminator", step, last);
        }
        set_requires_grad(train_set, false);
        finalize_stats(dn, feats);
        disc_loss_acc += last;
    }
    report.disc_loss_last = disc_loss_acc / static_cast<double>(m.banks.size());

    m.stage = n;
    return report;
}

StageReport learn_stage(PolicyModel& m, const Dataset& data, const StageConfig& cfg,
                        const std::function<void(const char*, int, double)>& on_step) {
    const StagePlan plan = plan_stage(m, data, cfg);
    return train_stage(m, data, cfg, plan, on_step);
}

}  // namespace clare
