#include "clare/tasks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "clare/blob.hpp"  // CheckpointError for corrupt dataset files

namespace clare {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kWaypointRadius = 0.06;
constexpr double kDetourOffset = 0.35;

double clampd(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

std::array<double, 2> clamp_point(std::array<double, 2> p, double b) {
    return {clampd(p[0], -b, b), clampd(p[1], -b, b)};
}

double dist(const std::array<double, 2>& a, const std::array<double, 2>& b) {
    return std::hypot(a[0] - b[0], a[1] - b[1]);
}

std::vector<double> random_unit_instruction(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(kInstructionDim);
    double norm2 = 0.0;
    for (auto& x : v) {
        x = rng.gaussian();
        norm2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& x : v) x *= inv;
    return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += a[i] * b[i];
    return d;  // both unit norm
}

// Unit vector correlated with `base` at exactly the requested cosine.
std::vector<double> correlated_instruction(const std::vector<double>& base, double cos_target,
                                           std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> w(base.size());
    for (auto& x : w) x = rng.gaussian();
    // Gram-Schmidt against base, then normalize.
    double proj = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) proj += w[i] * base[i];
    double norm2 = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] -= proj * base[i];
        norm2 += w[i] * w[i];
    }
    const double inv = 1.0 / std::sqrt(norm2);
    const double sin_target = std::sqrt(1.0 - cos_target * cos_target);
    std::vector<double> v(base.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = cos_target * base[i] + sin_target * inv * w[i];
    return v;
}

}  // namespace

const char* kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::Reach: return "reach";
        case TaskKind::TraceL: return "trace-L";
        case TaskKind::Push: return "push";
        case TaskKind::Detour: return "detour";
    }
    return "?";
}

EnvState env_reset(const TaskSpec& task, std::uint64_t episode_seed) {
    Rng rng(derive_seed(episode_seed, {seed_tag("env_reset"), static_cast<std::uint64_t>(task.id)}));
    EnvState s;
    s.pos = task.start_region.sample(rng);
    s.goal = task.goal_region.sample(rng);
    s.object = task.object_region.sample(rng);
    s.reached = goal_distance(s) <= task.tolerance;
    return s;
}

void env_step(const TaskSpec& task, EnvState& state, std::array<double, 2> action) {
    action[0] = clampd(action[0], -kActionBound, kActionBound);
    action[1] = clampd(action[1], -kActionBound, kActionBound);
    const auto prev = state.pos;
    state.pos = clamp_point({prev[0] + action[0], prev[1] + action[1]}, kWorkspaceBound);
    state.vel = {state.pos[0] - prev[0], state.pos[1] - prev[1]};
    state.step += 1;
    if (goal_distance(state) <= task.tolerance) state.reached = true;
}

double goal_distance(const EnvState& state) { return dist(state.pos, state.goal); }

int observation_dim() { return 4 + 4 + kInstructionDim; }

std::vector<double> assemble_observation(const TaskSpec& task, const EnvState& state) {
    std::vector<double> o;
    o.reserve(observation_dim());
    o.push_back(state.pos[0]);
    o.push_back(state.pos[1]);
    o.push_back(state.vel[0]);
    o.push_back(state.vel[1]);
    o.push_back(state.object[0]);
    o.push_back(state.object[1]);
    o.push_back(state.goal[0]);
    o.push_back(state.goal[1]);
    o.insert(o.end(), task.instruction.begin(), task.instruction.end());
    return o;
}

ExpertPlan make_expert_plan(const TaskSpec& task, const EnvState& init,
                            std::uint64_t episode_seed) {
    ExpertPlan plan;
    switch (task.kind) {
        case TaskKind::Reach:
            plan.waypoints = {init.goal};
            break;
        case TaskKind::TraceL:
            // Horizontal leg first, then vertical.
            plan.waypoints = {{init.goal[0], init.pos[1]}, init.goal};
            break;
        case TaskKind::Push:
            plan.waypoints = {init.object, init.goal};
            break;
        case TaskKind::Detour: {
            Rng rng(derive_seed(episode_seed, {seed_tag("detour_branch")}));
            const double branch = rng.uniform() < 0.5 ? -1.0 : 1.0;
            const double dx = init.goal[0] - init.pos[0];
            const double dy = init.goal[1] - init.pos[1];
            const double len = std::max(std::hypot(dx, dy), 1e-9);
            const std::array<double, 2> mid = {
                0.5 * (init.pos[0] + init.goal[0]) + branch * kDetourOffset * (-dy / len),
                0.5 * (init.pos[1] + init.goal[1]) + branch * kDetourOffset * (dx / len)};
            plan.waypoints = {clamp_point(mid, 0.95), init.goal};
            break;
        }
    }
    return plan;
}

void advance_plan(ExpertPlan& plan, const EnvState& state) {
    while (plan.next + 1 < plan.waypoints.size() &&
           dist(state.pos, plan.waypoints[plan.next]) < kWaypointRadius)
        ++plan.next;
}

std::array<double, 2> expert_action(const ExpertPlan& plan, const EnvState& state) {
    const auto& target = plan.waypoints[plan.next];
    return {clampd(target[0] - state.pos[0], -kActionBound, kActionBound),
            clampd(target[1] - state.pos[1], -kActionBound, kActionBound)};
}

std::size_t Dataset::total_steps() const {
    std::size_t n = 0;
    for (const auto& e : episodes) n += e.actions.size();
    return n;
}

Dataset collect_demos(const TaskSpec& task, int count, std::uint64_t seed, int* discarded) {
    Dataset ds;
    ds.task_id = task.id;
    ds.obs_dim = observation_dim();
    int discards = 0;
    std::uint64_t attempt = 0;
    while (static_cast<int>(ds.episodes.size()) < count) {
        const std::uint64_t ep_seed = derive_seed(seed, {seed_tag("demo"), attempt});
        ++attempt;
        EnvState state = env_reset(task, ep_seed);
        ExpertPlan plan = make_expert_plan(task, state, ep_seed);
        Episode ep;
        while (!state.reached && state.step < task.horizon) {
            advance_plan(plan, state);
            ep.observations.push_back(assemble_observation(task, state));
            const auto a = expert_action(plan, state);
            ep.actions.push_back(a);
            env_step(task, state, a);
        }
        if (state.reached && !ep.actions.empty()) {
            ds.episodes.push_back(std::move(ep));
        } else {
            ++discards;
            if (discards > count)
                throw std::runtime_error("collect_demos: expert failure rate above 50% on task " +
                                         std::to_string(task.id));
        }
    }
    if (discarded) *discarded = discards;
    return ds;
}

TaskSuite generate_suite(std::uint64_t seed, int n_pretrain, int n_stream) {
    if (n_pretrain < 1 || n_stream < 1)
        throw std::invalid_argument("generate_suite: counts must be >= 1");
    TaskSuite suite;
    suite.seed = seed;
    Rng rot_rng(derive_seed(seed, {seed_tag("rotation")}));
    const double base_rot = rot_rng.uniform(0.0, 2.0 * kPi);

    auto make_task = [&](int id, TaskKind kind, double angle, double radius) {
        TaskSpec t;
        t.id = id;
        t.kind = kind;
        const double gx = radius * std::cos(angle);
        const double gy = radius * std::sin(angle);
        t.goal_region = Box::around(clampd(gx, -0.85, 0.85), clampd(gy, -0.85, 0.85), 0.08);
        const double sx = -0.65 * std::cos(angle);
        const double sy = -0.65 * std::sin(angle);
        t.start_region = Box::around(clampd(sx, -0.85, 0.85), clampd(sy, -0.85, 0.85), 0.08);
        // Object sits off the straight start-goal line.
        const double mx = 0.5 * (gx + sx), my = 0.5 * (gy + sy);
        const double px = -(gy - sy), py = gx - sx;
        const double plen = std::max(std::hypot(px, py), 1e-9);
        t.object_region = Box::around(clampd(mx + 0.15 * px / plen, -0.85, 0.85),
                                      clampd(my + 0.15 * py / plen, -0.85, 0.85), 0.06);
        return t;
    };

    static const TaskKind kCycle[4] = {TaskKind::Reach, TaskKind::TraceL, TaskKind::Push,
                                       TaskKind::Detour};
    for (int i = 0; i < n_pretrain; ++i) {
        const double angle = base_rot + 2.0 * kPi * i / n_pretrain;
        suite.pretrain.push_back(make_task(i, kCycle[i % 4], angle, 0.55));
    }

    // Stream kinds: a same-kind pair (tasks 0 and 2, nearby goals) plus
    // distinct kinds in between to exercise both expansion and reuse.
    static const TaskKind kStreamCycle[5] = {TaskKind::Reach, TaskKind::TraceL, TaskKind::Reach,
                                             TaskKind::Detour, TaskKind::Push};
    const double stream_rot = base_rot + kPi / n_pretrain;  // between pretrain headings
    for (int i = 0; i < n_stream; ++i) {
        double angle;
        if (i == 2 && n_stream >= 3) {
            angle = stream_rot + 0.25;  // close to stream task 0
        } else {
            angle = stream_rot + 2.0 * kPi * i / n_stream;
        }
        const TaskKind kind = (i < 5) ? kStreamCycle[i] : kCycle[i % 4];
        suite.stream.push_back(make_task(100 + i, kind, angle, 0.8));
    }

    // Instructions: unit vectors, pairwise |cos| < 0.9 across the whole suite.
    std::vector<TaskSpec*> all;
    for (auto& t : suite.pretrain) all.push_back(&t);
    for (auto& t : suite.stream) all.push_back(&t);
    for (std::size_t i = 0; i < all.size(); ++i) {
        const bool paired = all[i]->id == 102 && n_stream >= 3;
        for (std::uint64_t salt = 0;; ++salt) {
            std::vector<double> instr;
            if (paired) {
                // Same-kind stream pair gets deliberately similar instructions,
                // like paraphrased commands would embed.
                instr = correlated_instruction(suite.stream[0].instruction, 0.8,
                                               derive_seed(seed, {seed_tag("instr"),
                                                                  static_cast<std::uint64_t>(all[i]->id),
                                                                  salt}));
            } else {
                instr = random_unit_instruction(derive_seed(
                    seed, {seed_tag("instr"), static_cast<std::uint64_t>(all[i]->id), salt}));
            }
            bool ok = true;
            for (std::size_t j = 0; j < i && ok; ++j)
                if (std::abs(cosine(instr, all[j]->instruction)) >= 0.9) ok = false;
            if (ok) {
                all[i]->instruction = std::move(instr);
                break;
            }
        }
    }
    return suite;
}

// ---- dataset file io --------------------------------------------------------

namespace {
constexpr char kDatasetMagic[8] = {'C', 'L', 'D', 'S', '0', '0', '0', '1'};
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open dataset for writing: " + path);
    out.write(kDatasetMagic, sizeof(kDatasetMagic));
    auto put32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    put32(static_cast<std::uint32_t>(ds.task_id));
    put32(static_cast<std::uint32_t>(ds.obs_dim));
    put32(static_cast<std::uint32_t>(ds.action_dim));
    put32(static_cast<std::uint32_t>(ds.episodes.size()));
    for (const auto& ep : ds.episodes) {
        put32(static_cast<std::uint32_t>(ep.actions.size()));
        for (const auto& o : ep.observations)
            out.write(reinterpret_cast<const char*>(o.data()),
                      static_cast<std::streamsize>(o.size() * sizeof(double)));
        for (const auto& a : ep.actions)
            out.write(reinterpret_cast<const char*>(a.data()), 2 * sizeof(double));
    }
    if (!out) throw CheckpointError("dataset write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open dataset: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kDatasetMagic, 8) != 0)
        throw CheckpointError("bad dataset magic: " + path);
    auto take32 = [&]() {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        if (!in) throw CheckpointError("corrupt dataset (truncated): " + path);
        return v;
    };
    Dataset ds;
    ds.task_id = static_cast<int>(take32());
    ds.obs_dim = static_cast<int>(take32());
    ds.action_dim = static_cast<int>(take32());
    const std::uint32_t n_eps = take32();
    if (ds.obs_dim <= 0 || ds.obs_dim > 4096 || ds.action_dim != 2 || n_eps > 1000000)
        throw CheckpointError("corrupt dataset header: " + path);
    ds.episodes.resize(n_eps);
    for (auto& ep : ds.episodes) {
        const std::uint32_t T = take32();
        ep.observations.assign(T, std::vector<double>(ds.obs_dim));
        ep.actions.assign(T, {0.0, 0.0});
        for (auto& o : ep.observations) {
            in.read(reinterpret_cast<char*>(o.data()),
                    static_cast<std::streamsize>(o.size() * sizeof(double)));
            if (!in) throw CheckpointError("corrupt dataset (truncated): " + path);
        }
        for (auto& a : ep.actions) {
            in.read(reinterpret_cast<char*>(a.data()), 2 * sizeof(double));
            if (!in) throw CheckpointError("corrupt dataset (truncated): " + path);
        }
    }
    return ds;
}

std::string suite_summary(const TaskSuite& suite) {
    std::ostringstream os;
    os << "task suite (seed " << suite.seed << ")\n";
    auto print = [&](const char* label, const std::vector<TaskSpec>& tasks) {
        os << label << " (" << tasks.size() << "):\n";
        for (const auto& t : tasks) {
            os << "  task " << t.id << "  " << kind_name(t.kind) << "  goal~("
               << 0.5 * (t.goal_region.lo_x + t.goal_region.hi_x) << ", "
               << 0.5 * (t.goal_region.lo_y + t.goal_region.hi_y) << ")  start~("
               << 0.5 * (t.start_region.lo_x + t.start_region.hi_x) << ", "
               << 0.5 * (t.start_region.lo_y + t.start_region.hi_y) << ")\n";
        }
    };
    print("pretrain", suite.pretrain);
    print("stream", suite.stream);
    return os.str();
}

}  // namespace clare
