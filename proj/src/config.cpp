#include "clare/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace clare {

void ExperimentConfig::validate() const {
    if (method != "clare" && method != "seqfft" && method != "er")
        throw ConfigError("method must be one of clare|seqfft|er, got '" + method + "'");
    if (n_pretrain < 1 || n_stream < 1) throw ConfigError("task counts must be >= 1");
    if (demos_per_task < 1) throw ConfigError("demos_per_task must be >= 1");
    if (adapter_rank < 1 || disc_bottleneck < 1) throw ConfigError("module ranks must be >= 1");
    if (std::isnan(gamma) || gamma < 0.0)
        throw ConfigError("gamma must be >= 0 (or 'inf')");
    if (pretrain_steps < 0 || adapter_steps < 0 || disc_steps < 0)
        throw ConfigError("step counts must be >= 0");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (pretrain_lr <= 0 || adapter_lr <= 0 || disc_lr <= 0)
        throw ConfigError("learning rates must be positive");
    if (er_buffer_fraction < 0.0 || er_buffer_fraction > 1.0)
        throw ConfigError("er_buffer_fraction must be in [0,1]");
    if (eval_episodes < 2 || eval_episodes % 2 != 0)
        throw ConfigError("eval_episodes must be even and >= 2");
    if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
    if (seeds.empty()) throw ConfigError("seeds list must not be empty");
    try {
        backbone.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (backbone.proprio_dim != 4 || backbone.context_dim != 4)
        throw ConfigError("observation layout is fixed: proprio_dim=4, context_dim=4");
    if (backbone.instruction_dim != 16)
        throw ConfigError("instruction embeddings are 16-dimensional");
    if (backbone.action_dim != 2) throw ConfigError("the task suite uses action_dim=2");
}

nlohmann::json ExperimentConfig::to_json() const {
    return {{"suite_seed", suite_seed},
            {"n_pretrain", n_pretrain},
            {"n_stream", n_stream},
            {"demos_per_task", demos_per_task},
            {"backbone", backbone.to_json()},
            {"adapter_rank", adapter_rank},
            {"disc_bottleneck", disc_bottleneck},
            {"gamma", gamma_str(gamma)},
            {"pretrain_steps", pretrain_steps},
            {"adapter_steps", adapter_steps},
            {"disc_steps", disc_steps},
            {"batch", batch},
            {"pretrain_lr", pretrain_lr},
            {"adapter_lr", adapter_lr},
            {"disc_lr", disc_lr},
            {"init_std", init_std},
            {"method", method},
            {"er_buffer_fraction", er_buffer_fraction},
            {"eval_episodes", eval_episodes},
            {"seed", seed},
            {"seeds", seeds},
            {"out_dir", out_dir}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.suite_seed = j.at("suite_seed");
    c.n_pretrain = j.at("n_pretrain");
    c.n_stream = j.at("n_stream");
    c.demos_per_task = j.at("demos_per_task");
    c.backbone = BackboneConfig::from_json(j.at("backbone"));
    c.adapter_rank = j.at("adapter_rank");
    c.disc_bottleneck = j.at("disc_bottleneck");
    c.gamma = parse_gamma(j.at("gamma").get<std::string>());
    c.pretrain_steps = j.at("pretrain_steps");
    c.adapter_steps = j.at("adapter_steps");
    c.disc_steps = j.at("disc_steps");
    c.batch = j.at("batch");
    c.pretrain_lr = j.at("pretrain_lr");
    c.adapter_lr = j.at("adapter_lr");
    c.disc_lr = j.at("disc_lr");
    c.init_std = j.at("init_std");
    c.method = j.at("method");
    c.er_buffer_fraction = j.at("er_buffer_fraction");
    c.eval_episodes = j.at("eval_episodes");
    c.seed = j.at("seed");
    c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.out_dir = j.at("out_dir");
    return c;
}

double parse_gamma(const std::string& s) {
    std::string t = s;
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
    if (t == "inf" || t == "infinite" || t == "infinity")
        return std::numeric_limits<double>::infinity();
    std::size_t pos = 0;
    double v;
    try {
        v = std::stod(t, &pos);
    } catch (const std::exception&) {
        throw ConfigError("cannot parse gamma value '" + s + "'");
    }
    if (pos != t.size() || std::isnan(v) || v < 0.0)
        throw ConfigError("gamma must be >= 0 or 'inf', got '" + s + "'");
    return v;
}

std::string gamma_str(double gamma) {
    if (std::isinf(gamma)) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", gamma);
    return buf;
}

namespace {

std::string join_u64(const std::vector<std::uint64_t>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ',';
        os << v[i];
    }
    return os.str();
}

std::string join_int(const std::vector<int>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ',';
        os << v[i];
    }
    return os.str();
}

std::vector<std::uint64_t> split_u64(const std::string& s) {
    std::vector<std::uint64_t> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ','))
        if (!tok.empty()) out.push_back(std::stoull(tok));
    return out;
}

std::vector<int> split_int(const std::string& s) {
    std::vector<int> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ','))
        if (!tok.empty()) out.push_back(std::stoi(tok));
    return out;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::string ExperimentConfig::to_ini() const {
    std::ostringstream os;
    os << "[suite]\n";
    os << "seed=" << suite_seed << "\n";
    os << "pretrain_tasks=" << n_pretrain << "\n";
    os << "stream_tasks=" << n_stream << "\n";
    os << "demos_per_task=" << demos_per_task << "\n";
    os << "\n[model]\n";
    os << "enc_width=" << backbone.enc_width << "\n";
    os << "enc_hidden=" << backbone.enc_hidden << "\n";
    os << "enc_blocks=" << backbone.enc_blocks << "\n";
    os << "dec_width=" << backbone.dec_width << "\n";
    os << "dec_hidden=" << backbone.dec_hidden << "\n";
    os << "dec_blocks=" << backbone.dec_blocks << "\n";
    os << "horizon=" << backbone.horizon << "\n";
    os << "applied_actions=" << backbone.applied_actions << "\n";
    os << "time_embed_dim=" << backbone.time_embed_dim << "\n";
    os << "euler_steps=" << backbone.euler_steps << "\n";
    os << "expandable=" << join_int(backbone.expandable) << "\n";
    os << "adapter_rank=" << adapter_rank << "\n";
    os << "disc_bottleneck=" << disc_bottleneck << "\n";
    os << "\n[training]\n";
    os << "gamma=" << gamma_str(gamma) << "\n";
    os << "pretrain_steps=" << pretrain_steps << "\n";
    os << "adapter_steps=" << adapter_steps << "\n";
    os << "disc_steps=" << disc_steps << "\n";
    os << "batch=" << batch << "\n";
    os << "pretrain_lr=" << fmt_double(pretrain_lr) << "\n";
    os << "adapter_lr=" << fmt_double(adapter_lr) << "\n";
    os << "disc_lr=" << fmt_double(disc_lr) << "\n";
    os << "init_std=" << fmt_double(init_std) << "\n";
    os << "\n[run]\n";
    os << "method=" << method << "\n";
    os << "er_buffer_fraction=" << fmt_double(er_buffer_fraction) << "\n";
    os << "eval_episodes=" << eval_episodes << "\n";
    os << "seed=" << seed << "\n";
    os << "seeds=" << join_u64(seeds) << "\n";
    os << "out_dir=" << out_dir << "\n";
    return os.str();
}

void load_config_ini(const std::string& path, ExperimentConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = t.substr(1, t.size() - 2);
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        const std::string k = section + "." + key;
        try {
            if (k == "suite.seed") cfg.suite_seed = std::stoull(val);
            else if (k == "suite.pretrain_tasks") cfg.n_pretrain = std::stoi(val);
            else if (k == "suite.stream_tasks") cfg.n_stream = std::stoi(val);
            else if (k == "suite.demos_per_task") cfg.demos_per_task = std::stoi(val);
            else if (k == "model.enc_width") cfg.backbone.enc_width = std::stoi(val);
            else if (k == "model.enc_hidden") cfg.backbone.enc_hidden = std::stoi(val);
            else if (k == "model.enc_blocks") cfg.backbone.enc_blocks = std::stoi(val);
            else if (k == "model.dec_width") cfg.backbone.dec_width = std::stoi(val);
            else if (k == "model.dec_hidden") cfg.backbone.dec_hidden = std::stoi(val);
            else if (k == "model.dec_blocks") cfg.backbone.dec_blocks = std::stoi(val);
            else if (k == "model.horizon") cfg.backbone.horizon = std::stoi(val);
            else if (k == "model.applied_actions") cfg.backbone.applied_actions = std::stoi(val);
            else if (k == "model.time_embed_dim") cfg.backbone.time_embed_dim = std::stoi(val);
            else if (k == "model.euler_steps") cfg.backbone.euler_steps = std::stoi(val);
            else if (k == "model.expandable") cfg.backbone.expandable = split_int(val);
            else if (k == "model.adapter_rank") cfg.adapter_rank = std::stoi(val);
            else if (k == "model.disc_bottleneck") cfg.disc_bottleneck = std::stoi(val);
            else if (k == "training.gamma") cfg.gamma = parse_gamma(val);
            else if (k == "training.pretrain_steps") cfg.pretrain_steps = std::stoi(val);
            else if (k == "training.adapter_steps") cfg.adapter_steps = std::stoi(val);
            else if (k == "training.disc_steps") cfg.disc_steps = std::stoi(val);
            else if (k == "training.batch") cfg.batch = std::stoi(val);
            else if (k == "training.pretrain_lr") cfg.pretrain_lr = std::stod(val);
            else if (k == "training.adapter_lr") cfg.adapter_lr = std::stod(val);
            else if (k == "training.disc_lr") cfg.disc_lr = std::stod(val);
            else if (k == "training.init_std") cfg.init_std = std::stod(val);
            else if (k == "run.method") cfg.method = val;
            else if (k == "run.er_buffer_fraction") cfg.er_buffer_fraction = std::stod(val);
            else if (k == "run.eval_episodes") cfg.eval_episodes = std::stoi(val);
            else if (k == "run.seed") cfg.seed = std::stoull(val);
            else if (k == "run.seeds") cfg.seeds = split_u64(val);
            else if (k == "run.out_dir") cfg.out_dir = val;
            else
                throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" + k +
                                  "'");
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": bad value for '" + k +
                              "': '" + val + "'");
        }
    }
}

}  // namespace clare
