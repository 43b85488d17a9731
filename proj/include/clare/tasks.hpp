#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "clare/rng.hpp"

namespace clare {

// Planar point robot in [-1,1]^2 with position-delta actions bounded to
// +/-0.1 per dimension per step.
constexpr double kWorkspaceBound = 1.0;
constexpr double kActionBound = 0.1;
constexpr int kInstructionDim = 16;

enum class TaskKind { Reach, TraceL, Push, Detour };
const char* kind_name(TaskKind k);

struct Box {
    double lo_x = 0, lo_y = 0, hi_x = 0, hi_y = 0;
    std::array<double, 2> sample(Rng& rng) const {
        return {rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)};
    }
    static Box around(double x, double y, double r) { return {x - r, y - r, x + r, y + r}; }
};

struct TaskSpec {
    int id = 0;
    TaskKind kind = TaskKind::Reach;
    Box start_region;
    Box goal_region;
    Box object_region;
    std::vector<double> instruction;  // unit-norm, kInstructionDim
    double tolerance = 0.05;
    int horizon = 200;
};

struct EnvState {
    std::array<double, 2> pos{0, 0};
    std::array<double, 2> vel{0, 0};
    std::array<double, 2> object{0, 0};
    std::array<double, 2> goal{0, 0};
    int step = 0;
    bool reached = false;  // latched success
};

// Deterministic initial state for a task; the same seed reproduces the same
// start/goal/object placement.
EnvState env_reset(const TaskSpec& task, std::uint64_t episode_seed);
// Clips the action, integrates position, saturates at workspace bounds,
// updates velocity bookkeeping and the success latch.
void env_step(const TaskSpec& task, EnvState& state, std::array<double, 2> action);
double goal_distance(const EnvState& state);

// proprio (pos, vel) + context (object, goal) + instruction
std::vector<double> assemble_observation(const TaskSpec& task, const EnvState& state);
int observation_dim();

// Scripted expert: proportional controller along a per-episode waypoint plan.
// Detour tasks pick the left/right branch from the episode seed (50/50).
struct ExpertPlan {
    std::vector<std::array<double, 2>> waypoints;
    std::size_t next = 0;
};
ExpertPlan make_expert_plan(const TaskSpec& task, const EnvState& init, std::uint64_t episode_seed);
std::array<double, 2> expert_action(const ExpertPlan& plan_at, const EnvState& state);
void advance_plan(ExpertPlan& plan, const EnvState& state);

struct Episode {
    std::vector<std::vector<double>> observations;  // one per step, before the action
    std::vector<std::array<double, 2>> actions;
    int length() const { return static_cast<int>(actions.size()); }
};

struct Dataset {
    int task_id = 0;
    int obs_dim = 0;
    int action_dim = 2;
    std::vector<Episode> episodes;
    mutable long access_count = 0;  // bumped by training-window reads; audits exemplar-free runs
    std::size_t total_steps() const;
};

struct TaskSuite {
    std::uint64_t seed = 0;
    std::vector<TaskSpec> pretrain;
    std::vector<TaskSpec> stream;
};

// Deterministic task generator. Stream tasks sit in held-out goal regions;
// the stream always contains a same-kind pair (so feature-similar stages
// occur) and at least two distinct kinds.
TaskSuite generate_suite(std::uint64_t seed, int n_pretrain, int n_stream);

// Rolls the expert until `count` successful episodes are recorded. Failed
// episodes are discarded and resampled; more discards than successes aborts.
Dataset collect_demos(const TaskSpec& task, int count, std::uint64_t seed,
                      int* discarded = nullptr);

// Header (task id, counts, dims, version) + flat little-endian arrays.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

std::string suite_summary(const TaskSuite& suite);

}  // namespace clare
