#include "clare/evalsuite.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace clare {

namespace {
constexpr double kAbsent = std::numeric_limits<double>::quiet_NaN();
}

SuccessMatrix::SuccessMatrix(int n) : n_tasks(n) {
    cells.assign(n, std::vector<double>(n, kAbsent));
    episode_counts.assign(n, std::vector<int>(n, 0));
}

void SuccessMatrix::set(int task, int stage, double rate, int episodes) {
    if (task < 1 || stage < task || stage > n_tasks)
        throw std::out_of_range("SuccessMatrix::set: cell (" + std::to_string(task) + "," +
                                std::to_string(stage) + ") outside the lower triangle");
    cells[task - 1][stage - 1] = rate;
    episode_counts[task - 1][stage - 1] = episodes;
}

double SuccessMatrix::get(int task, int stage) const {
    if (!has(task, stage))
        throw std::out_of_range("SuccessMatrix::get: cell (" + std::to_string(task) + "," +
                                std::to_string(stage) + ") absent");
    return cells[task - 1][stage - 1];
}

bool SuccessMatrix::has(int task, int stage) const {
    return task >= 1 && stage >= task && stage <= n_tasks &&
           !std::isnan(cells[task - 1][stage - 1]);
}

bool SuccessMatrix::complete() const {
    for (int n = 1; n <= n_tasks; ++n)
        for (int m = n; m <= n_tasks; ++m)
            if (!has(n, m)) return false;
    return n_tasks > 0;
}

Metrics compute_metrics(const SuccessMatrix& M) {
    if (!M.complete()) throw std::invalid_argument("compute_metrics: incomplete success matrix");
    const int N = M.n_tasks;
    Metrics out;

    double auc = 0.0;
    for (int n = 1; n <= N; ++n) {
        double inner = 0.0;
        for (int m = n; m <= N; ++m) inner += M.get(n, m);
        auc += inner / (N - n + 1);
    }
    auc /= N;
    out.auc = 100.0 * auc;

    double fwt = 0.0;
    for (int n = 1; n <= N; ++n) fwt += M.get(n, n);
    fwt /= N;
    out.fwt = 100.0 * fwt;

    if (N > 1) {
        double nbt = 0.0;
        for (int n = 1; n <= N - 1; ++n) {
            double inner = 0.0;
            for (int m = n + 1; m <= N; ++m) inner += M.get(n, n) - M.get(n, m);
            nbt += inner / (N - n);
        }
        nbt /= (N - 1);
        out.nbt = 100.0 * nbt;
    }
    return out;
}

std::string matrix_to_csv(const SuccessMatrix& m) {
    std::ostringstream os;
    os << "task";
    for (int s = 1; s <= m.n_tasks; ++s) os << ",stage" << s;
    os << "\n";
    char buf[64];
    for (int n = 1; n <= m.n_tasks; ++n) {
        os << n;
        for (int s = 1; s <= m.n_tasks; ++s) {
            os << ',';
            if (m.has(n, s)) {
                std::snprintf(buf, sizeof(buf), "%.17g", m.get(n, s));
                os << buf;
            }
        }
        os << "\n";
    }
    return os.str();
}

SuccessMatrix matrix_from_csv(const std::string& csv) {
    std::istringstream is(csv);
    std::string line;
    if (!std::getline(is, line)) throw std::invalid_argument("matrix_from_csv: empty input");
    int n_cols = 0;
    for (char c : line) n_cols += c == ',';
    SuccessMatrix m(n_cols);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::getline(row, cell, ',');
        const int task = std::stoi(cell);
        for (int s = 1; s <= n_cols && std::getline(row, cell, ','); ++s) {
            if (cell.empty()) continue;
            m.set(task, s, std::stod(cell), 0);
        }
    }
    return m;
}

double evaluate(const PolicyModel& model, const TaskSpec& task, int episodes, std::uint64_t seed) {
    if (episodes < 2 || episodes % 2 != 0)
        throw std::invalid_argument("evaluate: episode count must be even and >= 2");
    const auto& cfg = model.net.cfg;
    const RoutingMode mode = model.default_routing();
    int successes = 0;
    for (int ep = 0; ep < episodes; ++ep) {
        const int config_idx = ep / 2;
        const std::uint64_t env_seed =
            derive_seed(seed, {seed_tag("init_config"), static_cast<std::uint64_t>(config_idx)});
        EnvState state = env_reset(task, env_seed);
        Rng policy_rng(seed ^ static_cast<std::uint64_t>(ep));
        while (!state.reached && state.step < task.horizon) {
            const auto obs = assemble_observation(task, state);
            const ActionChunk chunk = model.sample_chunk(obs, cfg.euler_steps, policy_rng, mode);
            for (int t = 0; t < cfg.applied_actions && !state.reached &&
                            state.step < task.horizon;
                 ++t)
                env_step(task, state, {chunk.row(t)[0], chunk.row(t)[1]});
        }
        successes += state.reached ? 1 : 0;
    }
    return static_cast<double>(successes) / episodes;
}

RoutingAudit routing_audit(const PolicyModel& model, int task_stage, const Dataset& sample) {
    if (task_stage < 1 || task_stage > model.stage)
        throw std::invalid_argument("routing_audit: task stage " + std::to_string(task_stage) +
                                    " outside the learned range");
    if (!model.has_finalized_discriminators())
        throw std::runtime_error("routing_audit: model has no routable modules");
    const auto& cfg = model.net.cfg;
    const std::size_t total = sample.total_steps();
    Tensor obs = tensor({static_cast<int>(total), cfg.obs_dim()});
    std::size_t row = 0;
    for (const auto& ep : sample.episodes)
        for (const auto& o : ep.observations) {
            std::copy(o.begin(), o.end(),
                      obs->value.begin() + row * static_cast<std::size_t>(cfg.obs_dim()));
            ++row;
        }

    Tape tape;
    tape.recording = false;
    const EncodeResult enc = model.encode(tape, obs, RoutingMode::autonomous(), false);

    RoutingAudit audit;
    audit.expected.resize(model.banks.size());
    audit.histogram.resize(model.banks.size());
    audit.agreement.resize(model.banks.size());
    double acc = 0.0;
    for (std::size_t slot = 0; slot < model.banks.size(); ++slot) {
        audit.expected[slot] = model.banks[slot].link[task_stage - 1];
        long agree = 0;
        for (int sel : enc.selected[slot]) {
            audit.histogram[slot][sel] += 1;
            if (sel == audit.expected[slot]) ++agree;
        }
        audit.agreement[slot] = static_cast<double>(agree) / static_cast<double>(total);
        acc += audit.agreement[slot];
    }
    audit.mean_agreement = acc / static_cast<double>(model.banks.size());
    return audit;
}

}  // namespace clare
