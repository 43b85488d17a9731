#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "clare/runner.hpp"

namespace {

// Shared flags bound directly to the config struct. Precedence is
// defaults < config file < command-line flags: the file is applied before
// CLI11 parses, so explicit flags win.
void add_config_flags(CLI::App* cmd, clare::ExperimentConfig& cfg, std::string& gamma_raw) {
    cmd->add_option("--suite-seed", cfg.suite_seed, "Task suite seed");
    cmd->add_option("--pretrain-tasks", cfg.n_pretrain, "Number of pretraining tasks");
    cmd->add_option("--stream-tasks", cfg.n_stream, "Number of continual tasks");
    cmd->add_option("--demos", cfg.demos_per_task, "Demonstrations per task");
    cmd->add_option("--enc-width", cfg.backbone.enc_width, "Encoder width");
    cmd->add_option("--enc-hidden", cfg.backbone.enc_hidden, "Encoder FFN hidden width");
    cmd->add_option("--enc-blocks", cfg.backbone.enc_blocks, "Encoder FFN blocks");
    cmd->add_option("--dec-width", cfg.backbone.dec_width, "Decoder width");
    cmd->add_option("--dec-hidden", cfg.backbone.dec_hidden, "Decoder FFN hidden width");
    cmd->add_option("--dec-blocks", cfg.backbone.dec_blocks, "Decoder FFN blocks");
    cmd->add_option("--horizon", cfg.backbone.horizon, "Action chunk length");
    cmd->add_option("--applied-actions", cfg.backbone.applied_actions,
                    "Actions applied before replanning");
    cmd->add_option("--euler-steps", cfg.backbone.euler_steps, "Sampler integration steps");
    cmd->add_option("--expandable", cfg.backbone.expandable,
                    "Expandable encoder block indices")
        ->delimiter(',');
    cmd->add_option("--adapter-rank", cfg.adapter_rank, "Adapter bottleneck rank");
    cmd->add_option("--disc-bottleneck", cfg.disc_bottleneck, "Discriminator bottleneck");
    cmd->add_option("--gamma", gamma_raw, "Expansion threshold (number or 'inf')");
    cmd->add_option("--pretrain-steps", cfg.pretrain_steps, "Pretraining steps");
    cmd->add_option("--adapter-steps", cfg.adapter_steps, "Adapter / fine-tune steps per stage");
    cmd->add_option("--disc-steps", cfg.disc_steps, "Discriminator steps per stage");
    cmd->add_option("--batch", cfg.batch, "Batch size");
    cmd->add_option("--pretrain-lr", cfg.pretrain_lr, "Pretraining learning rate");
    cmd->add_option("--adapter-lr", cfg.adapter_lr, "Adapter learning rate (cosine)");
    cmd->add_option("--disc-lr", cfg.disc_lr, "Discriminator learning rate (constant)");
    cmd->add_option("--method", cfg.method, "clare | seqfft | er");
    cmd->add_option("--er-buffer-fraction", cfg.er_buffer_fraction,
                    "Replay fraction per batch (er)");
    cmd->add_option("--eval-episodes", cfg.eval_episodes, "Rollouts per evaluation cell");
    cmd->add_option("--seed", cfg.seed, "Run seed");
    cmd->add_option("--seeds", cfg.seeds, "Seed list (reporting metadata)")->delimiter(',');
    cmd->add_option("--out", cfg.out_dir, "Output directory");
}

// The config file must be applied before CLI11 binds flag values, so scan for
// --config ourselves.
std::string find_config_arg(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) return argv[i + 1];
        if (a.rfind("--config=", 0) == 0) return a.substr(9);
    }
    return "";
}

}  // namespace

int main(int argc, char** argv) {
    clare::ExperimentConfig cfg;
    std::string gamma_raw;

    try {
        const std::string config_path = find_config_arg(argc, argv);
        if (!config_path.empty()) clare::load_config_ini(config_path, cfg);
    } catch (const clare::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }

    CLI::App app{"Continual-learning engine: adapter routing and expansion on a "
                 "flow-matching policy"};
    app.require_subcommand(1);
    std::string config_dummy;
    app.add_option("--config", config_dummy, "INI config file (applied before flags)");

    auto* p_pre = app.add_subcommand("pretrain", "Train the base policy on the pretrain tasks");
    auto* p_learn = app.add_subcommand("learn", "Run continual-learning stages");
    auto* p_eval = app.add_subcommand("eval", "Evaluate stage checkpoints into a success matrix");
    auto* p_report = app.add_subcommand("report", "Aggregate finished runs");
    auto* p_inspect = app.add_subcommand("inspect", "Describe a checkpoint");

    for (CLI::App* sub : {p_pre, p_learn, p_eval}) {
        add_config_flags(sub, cfg, gamma_raw);
        sub->add_option("--config", config_dummy, "INI config file (applied before flags)");
    }

    std::string init_checkpoint;
    int from_stage = 1, to_stage = -1;
    p_learn->add_option("--init", init_checkpoint,
                        "Stage-0 checkpoint base path (defaults to this config's pretrain run)");
    p_learn->add_option("--from-stage", from_stage, "First stage to run");
    p_learn->add_option("--to-stage", to_stage, "Last stage to run (default: all)");

    std::string eval_run_dir;
    p_eval->add_option("--run", eval_run_dir, "Run directory (defaults to this config's run)");

    std::vector<std::string> report_dirs;
    std::string report_out = "report";
    p_report->add_option("runs", report_dirs, "Run directories")->required();
    p_report->add_option("--out", report_out, "Report output directory");

    std::string inspect_base;
    p_inspect->add_option("checkpoint", inspect_base, "Checkpoint base path (without .json)")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (!gamma_raw.empty()) cfg.gamma = clare::parse_gamma(gamma_raw);

        if (p_pre->parsed()) {
            const auto out = clare::cmd_pretrain(cfg);
            std::cout << "pretrain checkpoint: " << out.checkpoint_base << "\n";
            std::cout << "mean pretrain-task success: " << out.mean_success << "\n";
        } else if (p_learn->parsed()) {
            if (to_stage < 0) to_stage = cfg.n_stream;
            if (init_checkpoint.empty())
                init_checkpoint = clare::stage_base(clare::pretrain_dir_for(cfg), 0);
            const std::string dir = clare::cmd_learn(cfg, init_checkpoint, from_stage, to_stage);
            std::cout << "run directory: " << dir << "\n";
        } else if (p_eval->parsed()) {
            if (eval_run_dir.empty()) eval_run_dir = clare::run_dir_for(cfg);
            const auto out = clare::cmd_eval(cfg, eval_run_dir);
            std::cout << "AUC " << out.metrics.auc << "  FWT " << out.metrics.fwt << "  NBT "
                      << out.metrics.nbt << "\n";
        } else if (p_report->parsed()) {
            clare::cmd_report(report_dirs, report_out, std::cout);
        } else if (p_inspect->parsed()) {
            clare::cmd_inspect(inspect_base, std::cout);
        }
    } catch (const clare::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const clare::NumericsError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const clare::CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
