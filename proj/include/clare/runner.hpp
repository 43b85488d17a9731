#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "clare/checkpoint.hpp"
#include "clare/config.hpp"
#include "clare/evalsuite.hpp"
#include "clare/stage.hpp"

namespace clare {

// Exclusive per-directory lock (O_EXCL lock file, removed on destruction).
class RunLock {
public:
    explicit RunLock(const std::string& dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::string path_;
    int fd_ = -1;
};

std::string pretrain_dir_for(const ExperimentConfig& cfg);
std::string run_dir_for(const ExperimentConfig& cfg);  // <out_dir>/<method>_seed<seed>
std::string stage_base(const std::string& run_dir, int stage);  // checkpoints/stage_NNN

struct PretrainOutcome {
    std::string dir;
    std::string checkpoint_base;  // stage 0
    std::vector<double> per_task_success;
    double mean_success = 0.0;
};

// Multi-task flow-matching pretraining over the suite's pretrain tasks, then
// a closed-loop success report on them.
PretrainOutcome cmd_pretrain(const ExperimentConfig& cfg);

// Continual stages [from_stage, to_stage] starting from `init_base` (stage 0
// checkpoint). Each stage reloads the previous stage from disk, so resuming
// after an interruption reproduces an uninterrupted run byte for byte.
std::string cmd_learn(const ExperimentConfig& cfg, const std::string& init_base, int from_stage,
                      int to_stage);

struct EvalOutcome {
    SuccessMatrix matrix;
    Metrics metrics;
};

// Full lower-triangular matrix over all stages, metrics.json, parameter
// growth CSV, and (for routed models) a routing audit.
EvalOutcome cmd_eval(const ExperimentConfig& cfg, const std::string& run_dir);

// Aggregates finished run directories: per-method mean +/- std across seeds
// plus an expansion-threshold sweep table when the runs cover several gammas.
void cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir,
                std::ostream& console);

void cmd_inspect(const std::string& checkpoint_base, std::ostream& os);

// Per-stage demo dataset, identical across methods and run seeds.
Dataset stage_dataset(const ExperimentConfig& cfg, const TaskSpec& task);

// Batch provider for replay training: the first `buf_per_batch` samples of
// every batch come from the buffer, the rest from the new task. A null
// buffer yields new-task batches only.
BatchProvider mixed_provider(const WindowSampler* buffer, const WindowSampler& fresh,
                             int buf_per_batch);

}  // namespace clare
