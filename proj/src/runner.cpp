#include "clare/runner.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

namespace clare {

namespace fs = std::filesystem;
using nlohmann::json;

RunLock::RunLock(const std::string& dir) : path_(dir + "/lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
        throw ConfigError("run directory is locked (remove stale '" + path_ +
                          "' if no run is active)");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
}

RunLock::~RunLock() {
    if (fd_ >= 0) {
        ::close(fd_);
        ::unlink(path_.c_str());
    }
}

std::string pretrain_dir_for(const ExperimentConfig& cfg) {
    return cfg.out_dir + "/pretrain_seed" + std::to_string(cfg.seed);
}

std::string run_dir_for(const ExperimentConfig& cfg) {
    return cfg.out_dir + "/" + cfg.method + "_seed" + std::to_string(cfg.seed);
}

std::string stage_base(const std::string& run_dir, int stage) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "stage_%03d", stage);
    return run_dir + "/checkpoints/" + buf;
}

namespace {

class JsonlLog {
public:
    explicit JsonlLog(const std::string& path) : out_(path, std::ios::app) {}
    void write(const json& j) {
        out_ << j.dump() << "\n";
        out_.flush();
    }

private:
    std::ofstream out_;
};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    out << content;
}

void echo_config(const ExperimentConfig& cfg, const std::string& dir) {
    write_file(dir + "/config.ini", cfg.to_ini());
}

void write_run_record(const ExperimentConfig& cfg, const std::string& dir, const char* command,
                      double wall_sec, const json& extra) {
    json j = {{"command", command},
              {"config", cfg.to_json()},
              {"wall_clock_sec", wall_sec},
              {"format_version", 1}};
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    write_file(dir + "/run.json", j.dump(2) + "\n");
}

double elapsed_sec(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

long blob_param_count(const std::string& base) {
    long n = 0;
    for (const auto& e : read_blob(base + ".blob")) n += numel(e.shape);
    return n;
}

int manifest_adapter_count(const std::string& base) {
    std::ifstream in(base + ".json");
    if (!in) throw CheckpointError("cannot open manifest: " + base + ".json");
    json manifest;
    in >> manifest;
    int total = 0;
    for (const auto& bank : manifest.at("banks")) total += bank.at("adapters").size();
    return total;
}

}  // namespace

Dataset stage_dataset(const ExperimentConfig& cfg, const TaskSpec& task) {
    return collect_demos(task, cfg.demos_per_task,
                         derive_seed(cfg.suite_seed,
                                     {seed_tag("demos"), static_cast<std::uint64_t>(task.id)}));
}

BatchProvider mixed_provider(const WindowSampler* buffer, const WindowSampler& fresh,
                             int buf_per_batch) {
    return [buffer, &fresh, buf_per_batch](Rng& rng, int batch) {
        std::vector<WindowRef> refs(batch);
        for (int i = 0; i < batch; ++i)
            refs[i] = (buffer && i < buf_per_batch) ? buffer->sample(rng) : fresh.sample(rng);
        return refs;
    };
}

PretrainOutcome cmd_pretrain(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    PretrainOutcome out;
    out.dir = pretrain_dir_for(cfg);
    RunLock lock(out.dir);
    fs::create_directories(out.dir + "/checkpoints");
    echo_config(cfg, out.dir);
    JsonlLog log(out.dir + "/logs.jsonl");

    const TaskSuite suite = generate_suite(cfg.suite_seed, cfg.n_pretrain, cfg.n_stream);
    write_file(out.dir + "/suite.txt", suite_summary(suite));

    std::vector<Dataset> datasets;
    datasets.reserve(suite.pretrain.size());
    for (const auto& task : suite.pretrain) datasets.push_back(stage_dataset(cfg, task));

    PretrainOptions popt;
    popt.cfg = cfg.backbone;
    popt.steps = cfg.pretrain_steps;
    popt.batch = cfg.batch;
    popt.lr = cfg.pretrain_lr;
    popt.seed = cfg.seed;
    TrainStats stats;
    PolicyModel model = pretrain(datasets, popt, &stats, [&](int step, double loss) {
        if (step % 250 == 0)
            log.write({{"type", "train_log"}, {"phase", "pretrain"}, {"step", step},
                       {"loss", loss}});
    });

    out.checkpoint_base = stage_base(out.dir, 0);
    save_checkpoint(model, out.checkpoint_base);

    double acc = 0.0;
    for (const auto& task : suite.pretrain) {
        const double rate = evaluate(
            model, task, cfg.eval_episodes,
            derive_seed(cfg.seed, {seed_tag("pretrain_eval"),
                                   static_cast<std::uint64_t>(task.id)}));
        out.per_task_success.push_back(rate);
        acc += rate;
        log.write({{"type", "pretrain_eval"}, {"task", task.id}, {"rate", rate}});
    }
    out.mean_success = acc / static_cast<double>(suite.pretrain.size());

    write_file(out.dir + "/pretrain_report.json",
               json{{"per_task", out.per_task_success},
                    {"mean_success", out.mean_success},
                    {"episodes", cfg.eval_episodes},
                    {"loss_first", stats.mean_first_tenth()},
                    {"loss_last", stats.mean_last_tenth()}}
                       .dump(2) +
                   "\n");
    write_run_record(cfg, out.dir, "pretrain", elapsed_sec(t0),
                     {{"mean_success", out.mean_success}});
    return out;
}

std::string cmd_learn(const ExperimentConfig& cfg, const std::string& init_base, int from_stage,
                      int to_stage) {
    cfg.validate();
    if (from_stage < 1 || to_stage < from_stage || to_stage > cfg.n_stream)
        throw ConfigError("learn: stage range [" + std::to_string(from_stage) + "," +
                          std::to_string(to_stage) + "] outside 1.." +
                          std::to_string(cfg.n_stream));
    const auto t0 = std::chrono::steady_clock::now();
    const std::string run_dir = run_dir_for(cfg);
    RunLock lock(run_dir);
    fs::create_directories(run_dir + "/checkpoints");
    if (cfg.method == "er") fs::create_directories(run_dir + "/replay");
    echo_config(cfg, run_dir);
    JsonlLog log(run_dir + "/logs.jsonl");

    const TaskSuite suite = generate_suite(cfg.suite_seed, cfg.n_pretrain, cfg.n_stream);

    if (from_stage == 1) {
        // Re-emitting through save_checkpoint keeps the blob reference local;
        // the bytes are identical either way.
        PolicyModel init = load_checkpoint(init_base);
        if (init.stage != 0)
            throw CheckpointError("learn: initial checkpoint is at stage " +
                                  std::to_string(init.stage) + ", expected 0");
        save_checkpoint(init, stage_base(run_dir, 0));
    }

    json stage_summaries = json::array();
    for (int n = from_stage; n <= to_stage; ++n) {
        PolicyModel model = load_checkpoint(stage_base(run_dir, n - 1));
        if (model.stage != n - 1)
            throw CheckpointError("learn: checkpoint for stage " + std::to_string(n - 1) +
                                  " reports stage " + std::to_string(model.stage));
        const TaskSpec& task = suite.stream[n - 1];
        const Dataset data = stage_dataset(cfg, task);

        if (cfg.method == "clare") {
            StageConfig sc;
            sc.gamma = cfg.gamma;
            sc.adapter_rank = cfg.adapter_rank;
            sc.disc_bottleneck = cfg.disc_bottleneck;
            sc.adapter_steps = cfg.adapter_steps;
            sc.disc_steps = cfg.disc_steps;
            sc.batch = cfg.batch;
            sc.adapter_lr = cfg.adapter_lr;
            sc.disc_lr = cfg.disc_lr;
            sc.init_std = cfg.init_std;
            sc.seed = cfg.seed;
            const StageReport report = learn_stage(
                model, data, sc, [&](const char* phase, int step, double loss) {
                    if (step % 250 == 0)
                        log.write({{"type", "train_log"}, {"phase", phase}, {"stage", n},
                                   {"step", step}, {"loss", loss}});
                });
            json rj = report.to_json();
            rj["type"] = "stage_report";
            rj["task"] = task.id;
            log.write(rj);
            stage_summaries.push_back(rj);
        } else {
            // Full fine-tuning baselines share the CLARE training loop; only
            // the trainable mask and the batch source differ.
            std::vector<Dataset> buffer;
            if (cfg.method == "er")
                for (int k = 1; k < n; ++k)
                    buffer.push_back(load_dataset(run_dir + "/replay/task_" + std::to_string(k) +
                                                  ".ds"));
            WindowSampler new_sampler({&data});
            std::optional<WindowSampler> buf_sampler;
            if (!buffer.empty()) {
                std::vector<const Dataset*> ptrs;
                for (const auto& d : buffer) ptrs.push_back(&d);
                buf_sampler.emplace(std::move(ptrs));
            }
            const int buf_per_batch =
                buf_sampler ? static_cast<int>(std::lround(cfg.batch * cfg.er_buffer_fraction))
                            : 0;
            const BatchProvider provider =
                mixed_provider(buf_sampler ? &*buf_sampler : nullptr, new_sampler, buf_per_batch);
            TrainOptions opt;
            opt.steps = cfg.adapter_steps;
            opt.batch = cfg.batch;
            opt.lr = cfg.adapter_lr;
            opt.cosine = true;
            opt.seed = derive_seed(cfg.seed, {seed_tag("finetune"), static_cast<std::uint64_t>(n)});
            const TrainStats stats = train_flow(
                model, provider, model.backbone_parameters(), RoutingMode::none(), opt,
                [&](int step, double loss) {
                    if (step % 250 == 0)
                        log.write({{"type", "train_log"}, {"phase", "finetune"}, {"stage", n},
                                   {"step", step}, {"loss", loss}});
                });
            model.stage = n;
            const json rj = {{"type", "finetune_report"},
                             {"stage", n},
                             {"task", task.id},
                             {"loss_first", stats.mean_first_tenth()},
                             {"loss_last", stats.mean_last_tenth()},
                             {"buffer_per_batch", buf_per_batch}};
            log.write(rj);
            stage_summaries.push_back(rj);
        }

        save_checkpoint(model, stage_base(run_dir, n));
        if (cfg.method == "er")
            save_dataset(data, run_dir + "/replay/task_" + std::to_string(n) + ".ds");
    }

    write_run_record(cfg, run_dir, "learn", elapsed_sec(t0), {{"stages", stage_summaries}});
    return run_dir;
}

EvalOutcome cmd_eval(const ExperimentConfig& cfg, const std::string& run_dir) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    RunLock lock(run_dir);
    JsonlLog log(run_dir + "/logs.jsonl");
    const TaskSuite suite = generate_suite(cfg.suite_seed, cfg.n_pretrain, cfg.n_stream);
    const int N = cfg.n_stream;

    EvalOutcome out{SuccessMatrix(N), {}};
    for (int m = 1; m <= N; ++m) {
        const PolicyModel model = load_checkpoint(stage_base(run_dir, m));
        for (int n = 1; n <= m; ++n) {
            const double rate =
                evaluate(model, suite.stream[n - 1], cfg.eval_episodes,
                         derive_seed(cfg.seed, {seed_tag("eval"), static_cast<std::uint64_t>(n),
                                                static_cast<std::uint64_t>(m)}));
            out.matrix.set(n, m, rate, cfg.eval_episodes);
            log.write({{"type", "eval_cell"}, {"task", n}, {"stage", m}, {"rate", rate}});
        }
    }
    out.metrics = compute_metrics(out.matrix);

    write_file(run_dir + "/matrix.csv", matrix_to_csv(out.matrix));
    write_file(run_dir + "/metrics.json",
               json{{"auc", out.metrics.auc},
                    {"fwt", out.metrics.fwt},
                    {"nbt", out.metrics.nbt},
                    {"seeds", std::vector<std::uint64_t>{cfg.seed}},
                    {"episodes", cfg.eval_episodes}}
                       .dump(2) +
                   "\n");

    // Parameter growth across stages.
    {
        std::ostringstream os;
        os << "stage,total_params,added_params,added_fraction_of_base\n";
        const long base = blob_param_count(stage_base(run_dir, 0));
        long prev = base;
        char buf[64];
        for (int m = 0; m <= N; ++m) {
            const long total = m == 0 ? base : blob_param_count(stage_base(run_dir, m));
            const long added = total - prev;
            prev = total;
            std::snprintf(buf, sizeof(buf), "%.17g",
                          static_cast<double>(added) / static_cast<double>(base));
            os << m << ',' << total << ',' << added << ',' << (m == 0 ? "0" : buf) << "\n";
        }
        write_file(run_dir + "/params.csv", os.str());
    }

    // Routing audit against each task's stage-linked adapter (routed models).
    {
        const PolicyModel final_model = load_checkpoint(stage_base(run_dir, N));
        if (final_model.has_finalized_discriminators()) {
            json audits = json::array();
            for (int n = 1; n <= N; ++n) {
                const Dataset sample = collect_demos(
                    suite.stream[n - 1], 10,
                    derive_seed(cfg.suite_seed,
                                {seed_tag("audit_demos"),
                                 static_cast<std::uint64_t>(suite.stream[n - 1].id)}));
                const RoutingAudit audit = routing_audit(final_model, n, sample);
                json hist = json::array();
                for (std::size_t slot = 0; slot < audit.histogram.size(); ++slot) {
                    json h = json::object();
                    for (const auto& [adapter, count] : audit.histogram[slot])
                        h[std::to_string(adapter)] = count;
                    hist.push_back(h);
                }
                audits.push_back({{"task", n},
                                  {"expected", audit.expected},
                                  {"agreement", audit.agreement},
                                  {"mean_agreement", audit.mean_agreement},
                                  {"histogram", hist}});
            }
            write_file(run_dir + "/audit.json", audits.dump(2) + "\n");
        }
    }

    log.write({{"type", "eval_done"}, {"wall_clock_sec", elapsed_sec(t0)}});
    return out;
}

void cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir,
                std::ostream& console) {
    if (run_dirs.empty()) throw ConfigError("report: no run directories given");
    struct RunInfo {
        std::string dir, method;
        std::uint64_t seed;
        double gamma;
        Metrics metrics;
        int adapters = 0;
        json config;
    };
    std::vector<RunInfo> runs;
    for (const auto& dir : run_dirs) {
        RunInfo r;
        r.dir = dir;
        std::ifstream rin(dir + "/run.json");
        if (!rin) throw ConfigError("report: missing run.json in " + dir);
        json run_j;
        rin >> run_j;
        r.config = run_j.at("config");
        r.method = r.config.at("method");
        r.seed = r.config.at("seed");
        r.gamma = parse_gamma(r.config.at("gamma").get<std::string>());
        std::ifstream min(dir + "/metrics.json");
        if (!min) throw ConfigError("report: missing metrics.json in " + dir + " (run eval first)");
        json mj;
        min >> mj;
        r.metrics = {mj.at("auc"), mj.at("fwt"), mj.at("nbt")};
        const int N = r.config.at("n_stream");
        r.adapters = manifest_adapter_count(stage_base(dir, N));
        runs.push_back(std::move(r));
    }
    for (const auto& r : runs) {
        for (const char* key : {"suite_seed", "n_pretrain", "n_stream", "eval_episodes"})
            if (runs.front().config.at(key) != r.config.at(key))
                throw ConfigError("report: incompatible configs: " + r.dir + " differs in " + key);
        if (runs.front().config.at("backbone") != r.config.at("backbone"))
            throw ConfigError("report: incompatible configs: " + r.dir + " differs in backbone");
    }

    struct Agg {
        std::vector<double> auc, fwt, nbt, adapters;
    };
    auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return s / v.size();
    };
    auto sample_std = [&](const std::vector<double>& v) {
        if (v.size() < 2) return 0.0;
        const double m = mean(v);
        double s = 0;
        for (double x : v) s += (x - m) * (x - m);
        return std::sqrt(s / (v.size() - 1));
    };

    std::map<std::string, Agg> by_method;
    for (const auto& r : runs) {
        auto& a = by_method[r.method];
        a.auc.push_back(r.metrics.auc);
        a.fwt.push_back(r.metrics.fwt);
        a.nbt.push_back(r.metrics.nbt);
        a.adapters.push_back(r.adapters);
    }

    fs::create_directories(out_dir);
    std::ostringstream table, csv;
    table << "method     runs   AUC            FWT            NBT            adapters\n";
    csv << "method,runs,auc_mean,auc_std,fwt_mean,fwt_std,nbt_mean,nbt_std,adapters_mean\n";
    char line[256];
    for (const auto& [method, a] : by_method) {
        std::snprintf(line, sizeof(line),
                      "%-10s %-6zu %6.2f +/-%5.2f %6.2f +/-%5.2f %6.2f +/-%5.2f %6.1f\n",
                      method.c_str(), a.auc.size(), mean(a.auc), sample_std(a.auc), mean(a.fwt),
                      sample_std(a.fwt), mean(a.nbt), sample_std(a.nbt), mean(a.adapters));
        table << line;
        std::snprintf(line, sizeof(line), "%s,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      method.c_str(), a.auc.size(), mean(a.auc), sample_std(a.auc), mean(a.fwt),
                      sample_std(a.fwt), mean(a.nbt), sample_std(a.nbt), mean(a.adapters));
        csv << line;
    }

    // Expansion-threshold sweep over routed runs, when more than one gamma is
    // present.
    std::map<double, Agg> by_gamma;
    for (const auto& r : runs)
        if (r.method == "clare") {
            auto& a = by_gamma[r.gamma];
            a.auc.push_back(r.metrics.auc);
            a.fwt.push_back(r.metrics.fwt);
            a.nbt.push_back(r.metrics.nbt);
            a.adapters.push_back(r.adapters);
        }
    std::ostringstream sweep;
    if (by_gamma.size() > 1) {
        table << "\ngamma sweep (clare):\n";
        table << "gamma      adapters   AUC      FWT      NBT\n";
        sweep << "gamma,adapters_mean,auc_mean,fwt_mean,nbt_mean\n";
        for (const auto& [gamma, a] : by_gamma) {
            std::snprintf(line, sizeof(line), "%-10s %-10.1f %-8.2f %-8.2f %-8.2f\n",
                          gamma_str(gamma).c_str(), mean(a.adapters), mean(a.auc), mean(a.fwt),
                          mean(a.nbt));
            table << line;
            std::snprintf(line, sizeof(line), "%s,%.17g,%.17g,%.17g,%.17g\n",
                          gamma_str(gamma).c_str(), mean(a.adapters), mean(a.auc), mean(a.fwt),
                          mean(a.nbt));
            sweep << line;
        }
        write_file(out_dir + "/gamma_sweep.csv", sweep.str());
    }

    write_file(out_dir + "/report.txt", table.str());
    write_file(out_dir + "/report.csv", csv.str());
    console << table.str();
}

void cmd_inspect(const std::string& base, std::ostream& os) {
    std::ifstream in(base + ".json");
    if (!in) throw CheckpointError("cannot open manifest: " + base + ".json");
    json manifest;
    in >> manifest;
    os << "checkpoint " << base << "\n";
    os << "  format_version: " << manifest.at("format_version") << "\n";
    os << "  stage: " << manifest.at("stage") << "\n";
    const auto& bb = manifest.at("backbone");
    os << "  backbone: enc " << bb.at("enc_blocks") << "x" << bb.at("enc_width") << " (hidden "
       << bb.at("enc_hidden") << "), dec " << bb.at("dec_blocks") << "x" << bb.at("dec_width")
       << ", chunk " << bb.at("horizon") << "x" << bb.at("action_dim") << "\n";
    os << "  parameters: " << blob_param_count(base) << "\n";
    for (const auto& bank : manifest.at("banks")) {
        os << "  layer " << bank.at("layer") << ": " << bank.at("adapters").size()
           << " adapters, " << bank.at("discriminators").size() << " discriminators, link=[";
        bool first = true;
        for (const auto& l : bank.at("link")) {
            if (!first) os << ",";
            os << l;
            first = false;
        }
        os << "]\n";
        for (const auto& d : bank.at("discriminators"))
            os << "    disc stage " << d.at("stage") << ": mu=" << d.at("mu")
               << " sigma=" << d.at("sigma") << (d.at("finalized").get<bool>() ? "" : " (training)")
               << "\n";
    }
}

}  // namespace clare
