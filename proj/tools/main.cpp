// taper: structured-pruning training toolkit.
//
// Exit codes: 0 success, 1 usage/config error, 2 data or file format error,
// 3 numeric failure, 4 compaction failure.

#include <CLI11.hpp>
#include <cstdio>
#include <string>

#include "commands.hpp"
#include "config.hpp"

namespace {

using taper::cli::RunConfig;

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string data;
    std::string backend;
    long long seed = -1;
    bool determinism = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "flat key = value config file");
    cmd->add_option("--out-dir", flags.out_dir, "output directory");
    cmd->add_option("--data", flags.data, "synth | cifar10:<dir> | idx:<imgs>,<lbls>");
    cmd->add_option("--backend", flags.backend, "auto | scalar | avx2");
    cmd->add_option("--seed", flags.seed, "random seed");
    cmd->add_flag("--determinism", flags.determinism,
                  "pin the run to a reproducible configuration");
}

RunConfig assemble(const CommonFlags& flags) {
    RunConfig cfg;
    if (!flags.config_path.empty()) taper::cli::load_config_file(cfg, flags.config_path);
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (!flags.data.empty()) cfg.data.source = flags.data;
    if (!flags.backend.empty()) cfg.backend = flags.backend;
    if (flags.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(flags.seed);
    if (flags.determinism) cfg.train.determinism = true;
    return cfg;
}

template <class F64, class F32>
int with_precision(const std::string& precision, F64&& f64, F32&& f32) {
    if (precision == "f32") return f32();
    return f64();
}

int dispatch(int argc, char** argv) {
    CLI::App app{"taper: learns filter counts and features together by training under an "
                 "integrated sparsity/pruning/diversity objective"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "train with online pruning, write checkpoints");
    CommonFlags train_flags;
    add_common(train, train_flags);
    double target_ratio = -1, lambda1 = -1, lambda2 = -1, lambda3 = -1;
    bool freeze_pruned = false, trace = false;
    train->add_option("--target-ratio", target_ratio, "final pruning ratio in [0,1)");
    train->add_option("--lambda1", lambda1, "sparsity weight");
    train->add_option("--lambda2", lambda2, "pruning-loss weight");
    train->add_option("--lambda3", lambda3, "diversity weight");
    train->add_flag("--freeze-pruned", freeze_pruned, "pruned filters receive no updates");
    train->add_flag("--trace", trace, "write per-step loss breakdown CSV");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    CommonFlags eval_flags;
    add_common(eval, eval_flags);
    std::string eval_ckpt;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();

    // compact
    auto* compact = app.add_subcommand("compact",
                                       "realize a checkpoint's mask as a narrower network");
    CommonFlags compact_flags;
    add_common(compact, compact_flags);
    std::string compact_ckpt, compact_out;
    compact->add_option("--checkpoint", compact_ckpt, "checkpoint path")->required();
    compact->add_option("--out", compact_out, "output checkpoint path");

    // report
    auto* report = app.add_subcommand("report", "parameter/FLOP stats and pruning report");
    CommonFlags report_flags;
    add_common(report, report_flags);
    std::string report_ckpt;
    report->add_option("--checkpoint", report_ckpt, "checkpoint path")->required();

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    std::size_t gc_trials = 100;
    double gc_tol = 1e-4;
    std::size_t gc_seed = 2024;
    gradcheck->add_option("--trials", gc_trials, "number of randomized configurations");
    gradcheck->add_option("--tol", gc_tol, "relative error tolerance");
    gradcheck->add_option("--seed", gc_seed, "suite seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;  // usage
    }

    if (train->parsed()) {
        RunConfig cfg = assemble(train_flags);
        if (target_ratio >= 0) cfg.schedule.target_ratio = target_ratio;
        if (lambda1 >= 0) cfg.objective.lambda1 = lambda1;
        if (lambda2 >= 0) cfg.objective.lambda2 = lambda2;
        if (lambda3 >= 0) cfg.objective.lambda3 = lambda3;
        if (freeze_pruned) cfg.train.freeze_pruned = true;
        if (trace) cfg.trace = true;
        cfg.objective.task = cfg.task;
        return with_precision(
            cfg.precision, [&] { return taper::cli::run_train<double>(cfg); },
            [&] { return taper::cli::run_train<float>(cfg); });
    }
    if (eval->parsed()) {
        RunConfig cfg = assemble(eval_flags);
        const auto ssize = taper::cli::peek_scalar_size(eval_ckpt);
        return ssize == 4 ? taper::cli::run_eval<float>(cfg, eval_ckpt)
                          : taper::cli::run_eval<double>(cfg, eval_ckpt);
    }
    if (compact->parsed()) {
        RunConfig cfg = assemble(compact_flags);
        if (compact_out.empty()) compact_out = cfg.out_dir + "/compacted.tpr";
        std::filesystem::create_directories(
            std::filesystem::path(compact_out).parent_path().empty()
                ? "."
                : std::filesystem::path(compact_out).parent_path().string());
        const auto ssize = taper::cli::peek_scalar_size(compact_ckpt);
        return ssize == 4 ? taper::cli::run_compact<float>(cfg, compact_ckpt, compact_out)
                          : taper::cli::run_compact<double>(cfg, compact_ckpt, compact_out);
    }
    if (report->parsed()) {
        RunConfig cfg = assemble(report_flags);
        const auto ssize = taper::cli::peek_scalar_size(report_ckpt);
        return ssize == 4 ? taper::cli::run_report<float>(cfg, report_ckpt)
                          : taper::cli::run_report<double>(cfg, report_ckpt);
    }
    if (gradcheck->parsed()) {
        return taper::cli::run_gradcheck(gc_trials, gc_tol, gc_seed);
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const taper::CompactionError& e) {
        std::fprintf(stderr, "compaction error: %s\n", e.what());
        return 4;
    } catch (const taper::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const taper::DegenerateError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const taper::UndefinedDiversityError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const taper::FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return 2;
    } catch (const taper::IndexError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const taper::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
