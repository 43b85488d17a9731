#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "clare/policy.hpp"
#include "clare/tasks.hpp"

namespace clare {

// Lower-triangular record of success rates r[task n | after stage m], m >= n.
// Tasks and stages are 1-based to match the reporting convention.
struct SuccessMatrix {
    int n_tasks = 0;
    std::vector<std::vector<double>> cells;  // cells[n-1][m-1]; NaN = absent
    std::vector<std::vector<int>> episode_counts;

    explicit SuccessMatrix(int n = 0);
    void set(int task, int stage, double rate, int episodes);
    double get(int task, int stage) const;
    bool has(int task, int stage) const;
    bool complete() const;  // every m >= n filled
};

struct Metrics {
    double auc = 0.0;  // percentage points
    double fwt = 0.0;
    double nbt = 0.0;
};

// AUC / FWT / NBT from the full matrix; throws on incomplete input.
Metrics compute_metrics(const SuccessMatrix& m);

std::string matrix_to_csv(const SuccessMatrix& m);
SuccessMatrix matrix_from_csv(const std::string& csv);

// Receding-horizon closed-loop evaluation: episodes/2 distinct initial
// configurations, each run twice with different policy noise.
double evaluate(const PolicyModel& model, const TaskSpec& task, int episodes,
                std::uint64_t seed);

// Which adapter does autonomous routing pick on this task's data, versus the
// adapter its stage discriminator is linked to?
struct RoutingAudit {
    std::vector<int> expected;                    // per layer
    std::vector<std::map<int, long>> histogram;   // per layer: adapter -> count
    std::vector<double> agreement;                // per layer
    double mean_agreement = 0.0;
};

RoutingAudit routing_audit(const PolicyModel& model, int task_stage, const Dataset& sample);

}  // namespace clare
