#include "clare/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace clare {

void BackboneConfig::validate() const {
    if (proprio_dim < 1 || context_dim < 0 || instruction_dim < 1)
        throw std::invalid_argument("backbone: bad observation dims");
    if (enc_width < 1 || enc_hidden < 1 || enc_blocks < 1 || dec_width < 1 || dec_hidden < 1 ||
        dec_blocks < 1)
        throw std::invalid_argument("backbone: bad network dims");
    if (horizon < 1 || applied_actions < 1 || applied_actions > horizon || action_dim < 1)
        throw std::invalid_argument("backbone: need horizon >= applied_actions >= 1");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
        throw std::invalid_argument("backbone: time_embed_dim must be even and >= 2");
    if (euler_steps < 1) throw std::invalid_argument("backbone: euler_steps must be >= 1");
    if (expandable.empty()) throw std::invalid_argument("backbone: no expandable layers");
    int prev = -1;
    for (int e : expandable) {
        if (e <= prev || e < 0 || e >= enc_blocks)
            throw std::invalid_argument(
                "backbone: expandable layers must be strictly increasing encoder block indices");
        prev = e;
    }
}

nlohmann::json BackboneConfig::to_json() const {
    return {{"proprio_dim", proprio_dim},
            {"context_dim", context_dim},
            {"instruction_dim", instruction_dim},
            {"enc_width", enc_width},
            {"enc_hidden", enc_hidden},
            {"enc_blocks", enc_blocks},
            {"dec_width", dec_width},
            {"dec_hidden", dec_hidden},
            {"dec_blocks", dec_blocks},
            {"horizon", horizon},
            {"applied_actions", applied_actions},
            {"action_dim", action_dim},
            {"time_embed_dim", time_embed_dim},
            {"euler_steps", euler_steps},
            {"expandable", expandable}};
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j) {
    BackboneConfig c;
    c.proprio_dim = j.at("proprio_dim");
    c.context_dim = j.at("context_dim");
    c.instruction_dim = j.at("instruction_dim");
    c.enc_width = j.at("enc_width");
    c.enc_hidden = j.at("enc_hidden");
    c.enc_blocks = j.at("enc_blocks");
    c.dec_width = j.at("dec_width");
    c.dec_hidden = j.at("dec_hidden");
    c.dec_blocks = j.at("dec_blocks");
    c.horizon = j.at("horizon");
    c.applied_actions = j.at("applied_actions");
    c.action_dim = j.at("action_dim");
    c.time_embed_dim = j.at("time_embed_dim");
    c.euler_steps = j.at("euler_steps");
    c.expandable = j.at("expandable").get<std::vector<int>>();
    c.validate();
    return c;
}

namespace {

FfnBlock init_block(const std::string& prefix, int width, int hidden, Rng& rng) {
    FfnBlock b;
    b.ln_g = tensor({width}, 1.0);
    b.ln_g->name = prefix + ".ln.g";
    b.ln_b = tensor({width}, 0.0);
    b.ln_b->name = prefix + ".ln.b";
    b.W1 = gaussian_tensor({hidden, width}, rng, 1.0 / std::sqrt(static_cast<double>(width)),
                           false, prefix + ".W1");
    b.b1 = tensor({hidden}, 0.0);
    b.b1->name = prefix + ".b1";
    b.W2 = gaussian_tensor({width, hidden}, rng, 1.0 / std::sqrt(static_cast<double>(hidden)),
                           false, prefix + ".W2");
    b.b2 = tensor({width}, 0.0);
    b.b2->name = prefix + ".b2";
    return b;
}

}  // namespace

Backbone Backbone::init(const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    Backbone net;
    net.cfg = cfg;
    net.enc_in_W = gaussian_tensor({cfg.enc_width, cfg.obs_dim()}, rng,
                                   1.0 / std::sqrt(static_cast<double>(cfg.obs_dim())), false,
                                   "enc.in.W");
    net.enc_in_b = tensor({cfg.enc_width}, 0.0);
    net.enc_in_b->name = "enc.in.b";
    for (int i = 0; i < cfg.enc_blocks; ++i)
        net.enc.push_back(init_block("enc.b" + std::to_string(i), cfg.enc_width, cfg.enc_hidden,
                                     rng));
    const int dec_in = cfg.enc_width + cfg.chunk_dim() + cfg.time_embed_dim;
    net.dec_in_W = gaussian_tensor({cfg.dec_width, dec_in}, rng,
                                   1.0 / std::sqrt(static_cast<double>(dec_in)), false,
                                   "dec.in.W");
    net.dec_in_b = tensor({cfg.dec_width}, 0.0);
    net.dec_in_b->name = "dec.in.b";
    for (int i = 0; i < cfg.dec_blocks; ++i)
        net.dec.push_back(init_block("dec.b" + std::to_string(i), cfg.dec_width, cfg.dec_hidden,
                                     rng));
    net.out_W = gaussian_tensor({cfg.chunk_dim(), cfg.dec_width}, rng,
                                0.1 / std::sqrt(static_cast<double>(cfg.dec_width)), false,
                                "out.W");
    net.out_b = tensor({cfg.chunk_dim()}, 0.0);
    net.out_b->name = "out.b";
    return net;
}

std::vector<std::pair<std::string, Tensor>> Backbone::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto push = [&](const Tensor& t) { out.emplace_back(t->name, t); };
    push(enc_in_W);
    push(enc_in_b);
    for (const auto& b : enc) {
        push(b.ln_g);
        push(b.ln_b);
        push(b.W1);
        push(b.b1);
        push(b.W2);
        push(b.b2);
    }
    push(dec_in_W);
    push(dec_in_b);
    for (const auto& b : dec) {
        push(b.ln_g);
        push(b.ln_b);
        push(b.W1);
        push(b.b1);
        push(b.W2);
        push(b.b2);
    }
    push(out_W);
    push(out_b);
    return out;
}

std::vector<Tensor> Backbone::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

long Backbone::parameter_count() const {
    long n = 0;
    for (const auto& t : parameters()) n += static_cast<long>(t->size());
    return n;
}

std::vector<double> time_embedding(double s, int dim) {
    const int half = dim / 2;
    std::vector<double> e(dim);
    for (int i = 0; i < half; ++i) {
        // frequencies log-spaced from 1 to 1000
        const double w = std::exp(std::log(1000.0) * i / std::max(half - 1, 1));
        e[2 * i] = std::sin(s * w);
        e[2 * i + 1] = std::cos(s * w);
    }
    return e;
}

}  // namespace clare
