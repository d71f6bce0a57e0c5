#pragma once

#include <cstdio>
#include <filesystem>
#include <string>

#include "config.hpp"
#include "taper/checkpoint.hpp"
#include "taper/csv.hpp"
#include "taper/gradcheck.hpp"
#include "taper/kernels.hpp"
#include "taper/metrics.hpp"

namespace taper::cli {

inline void apply_backend(const std::string& backend) {
    if (backend == "auto") {
        kern::set_backend(kern::preferred_backend());
    } else if (backend == "scalar") {
        kern::set_backend(kern::Backend::scalar);
    } else {
        kern::set_backend(kern::Backend::avx2);
    }
}

// Reads just enough of the header to learn the stored precision.
inline std::uint32_t peek_scalar_size(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint: " + path);
    char header[16];
    in.read(header, 16);
    if (in.gcount() != 16) throw FormatError("truncated checkpoint " + path, 0);
    std::uint32_t ssize;
    std::memcpy(&ssize, header + 12, 4);
    return ssize;
}

template <class T>
struct LoadedData {
    data::Dataset<T> train;
    data::Dataset<T> test;
};

template <class T>
LoadedData<T> load_data(const DataConfig& dc, std::uint64_t seed) {
    LoadedData<T> out;
    if (dc.source == "synth") {
        out.train = data::synth_blobs<T>(dc.synth_classes, dc.synth_train_per_class,
                                         dc.synth_image_size, Rng::mix(seed, 1001),
                                         dc.synth_channels, dc.synth_snr);
        out.test = data::synth_blobs<T>(dc.synth_classes, dc.synth_test_per_class,
                                        dc.synth_image_size, Rng::mix(seed, 1002),
                                        dc.synth_channels, dc.synth_snr);
    } else if (dc.source.rfind("cifar10:", 0) == 0) {
        const std::string dir = dc.source.substr(8);
        out.train = data::load_cifar10_binary<T>(dir, data::Split::train);
        out.test = data::load_cifar10_binary<T>(dir, data::Split::test);
    } else if (dc.source.rfind("idx:", 0) == 0) {
        const std::string rest = dc.source.substr(4);
        const auto comma = rest.find(',');
        if (comma == std::string::npos)
            throw ConfigError("data: idx needs <images>,<labels> paths");
        out.train = data::load_idx<T>(rest.substr(0, comma), rest.substr(comma + 1));
        out.test = out.train;  // single-file smoke data: evaluate on the same set
    } else {
        throw ConfigError("data: unknown source '" + dc.source + "'");
    }
    data::standardize(out.train, {&out.test});
    out.train.split = data::Split::train;
    out.test.split = data::Split::test;
    return out;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

template <class T>
int run_train(const RunConfig& cfg) {
    apply_backend(cfg.backend);
    const NetworkSpec spec = make_spec(cfg);
    auto data = load_data<T>(cfg.data, cfg.train.seed);
    auto model = build<T>(spec, cfg.train.seed);

    std::filesystem::create_directories(cfg.out_dir);
    const auto out = [&](const std::string& name) { return cfg.out_dir + "/" + name; };

    {
        csvio::Writer stats_csv(out("stats.csv"), {"layer", "params", "flops"});
        for (const auto& ls : metrics::model_stats(spec).per_layer)
            stats_csv.row({csvio::num(ls.layer), csvio::num(ls.params), csvio::num(ls.flops)});
    }

    csvio::Writer epoch_csv(out("epoch_log.csv"),
                            {"epoch", "task", "sparsity", "gamma_R", "gamma_P", "diversity",
                             "total", "acc", "ratio"});
    csvio::Writer prune_csv(out("prune_report.csv"),
                            {"epoch", "ratio", "layer", "survivors", "total"});
    std::optional<csvio::Writer> trace_csv;
    if (cfg.trace)
        trace_csv.emplace(out("trace.csv"), std::vector<std::string>{
                                                "step", "task", "sparsity", "gamma_R", "gamma_P",
                                                "diversity_sum", "total"});

    std::size_t global_step = 0;
    trainer::FitHooks hooks;
    hooks.on_epoch_start = [&](std::size_t epoch, const pruner::PruneReport& rep) {
        const double ratio = pruner::ratio_at_epoch(cfg.schedule, epoch);
        for (std::size_t i = 0; i < rep.survivors.size(); ++i) {
            prune_csv.row({csvio::num(epoch), csvio::num(ratio), csvio::num(rep.owner_layers[i]),
                           csvio::num(rep.survivors[i]), csvio::num(rep.totals[i])});
        }
        csvio::Writer gcsv(out("gammas_epoch" + std::to_string(epoch) + ".csv"),
                           {"rank", "layer", "filter", "gamma_abs"});
        std::size_t rank = 1;
        for (const auto& e : rep.sorted_gammas) {
            gcsv.row({csvio::num(rank++), csvio::num(e.layer), csvio::num(e.filter),
                      csvio::num(e.gamma_abs)});
        }
    };
    hooks.on_step = [&](std::size_t, std::size_t, const objective::LossBreakdown& b) {
        if (trace_csv) {
            trace_csv->row({csvio::num(global_step), csvio::num(b.task), csvio::num(b.sparsity),
                            csvio::num(b.gamma_R), csvio::num(b.gamma_P),
                            csvio::num(b.diversity), csvio::num(b.total)});
        }
        ++global_step;
    };
    hooks.on_epoch_end = [&](const trainer::EpochLog& log) {
        epoch_csv.row({csvio::num(log.epoch), csvio::num(log.mean.task),
                       csvio::num(log.mean.sparsity), csvio::num(log.gamma_R_premask),
                       csvio::num(log.gamma_P_premask), csvio::num(log.mean.diversity),
                       csvio::num(log.mean.total), csvio::num(log.eval_metric),
                       csvio::num(log.ratio)});
        std::printf("epoch %zu/%zu ratio %.3f loss %.4f %s %.4f\n", log.epoch, cfg.train.epochs,
                    log.ratio, log.mean.total,
                    cfg.task == TaskKind::classification ? "acc" : "psnr", log.eval_metric);
        std::fflush(stdout);
    };

    try {
        auto result =
            trainer::fit(model, data.train, data.test, cfg.objective, cfg.schedule, cfg.train,
                         &hooks);
        checkpoint::save(model, out("checkpoint.tpr"));
        checkpoint::save(result.compacted, out("compacted.tpr"));
        {
            csvio::Writer stats_csv(out("stats_compacted.csv"), {"layer", "params", "flops"});
            for (const auto& ls : metrics::model_stats(result.compacted.spec).per_layer)
                stats_csv.row(
                    {csvio::num(ls.layer), csvio::num(ls.params), csvio::num(ls.flops)});
        }
        {
            csvio::Writer gcsv(out("gammas_final.csv"),
                               {"rank", "layer", "filter", "gamma_abs"});
            std::size_t rank = 1;
            for (const auto& e : result.final_report.sorted_gammas)
                gcsv.row({csvio::num(rank++), csvio::num(e.layer), csvio::num(e.filter),
                          csvio::num(e.gamma_abs)});
        }
        const auto before = metrics::model_stats(spec);
        const auto after = metrics::model_stats(result.compacted.spec);
        std::printf("final pre-mask gamma_P %.3g (gamma_R %.6g)\n", result.final_gamma_P,
                    result.final_gamma_R);
        std::printf("final %s %.4f\n",
                    cfg.task == TaskKind::classification ? "accuracy" : "psnr",
                    result.final_metric);
        std::printf("params %zu -> %zu (%.1f%%), flops %zu -> %zu (%.1f%%)\n",
                    before.params_total, after.params_total,
                    100.0 * static_cast<double>(after.params_total) /
                        static_cast<double>(before.params_total),
                    before.flops_total, after.flops_total,
                    100.0 * static_cast<double>(after.flops_total) /
                        static_cast<double>(before.flops_total));
        std::printf("wrote %s and %s\n", out("checkpoint.tpr").c_str(),
                    out("compacted.tpr").c_str());
        return 0;
    } catch (const CompactionError&) {
        // keep the trained, masked model around for inspection
        checkpoint::save(model, out("checkpoint.tpr"));
        std::fprintf(stderr, "saved masked model to %s\n", out("checkpoint.tpr").c_str());
        throw;
    }
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

template <class T>
int run_eval(const RunConfig& cfg, const std::string& ckpt) {
    apply_backend(cfg.backend);
    auto model = checkpoint::load<T>(ckpt);
    auto data = load_data<T>(cfg.data, cfg.train.seed);
    const double metric = trainer::evaluate(model, data.test, model.spec.task);
    std::printf("%s %.6f\n",
                model.spec.task == TaskKind::classification ? "accuracy" : "psnr", metric);
    return 0;
}

// ---------------------------------------------------------------------------
// compact
// ---------------------------------------------------------------------------

template <class T>
int run_compact(const RunConfig& cfg, const std::string& ckpt, const std::string& out_path) {
    apply_backend(cfg.backend);
    auto model = checkpoint::load<T>(ckpt);
    auto state = ScalingState<T>::gather(model);
    auto narrow = pruner::compact(model, pruner::plan_compaction(state));

    // equivalence report: eval-mode outputs on random inputs
    Rng rng(cfg.train.seed);
    double worst = 0;
    Shape batch_shape = model.spec.input_shape;
    batch_shape.insert(batch_shape.begin(), 2);
    for (int rep = 0; rep < 100; ++rep) {
        auto x = make_tensor<T>(batch_shape);
        for (auto& v : x->data) v = static_cast<T>(rng.normal());
        Graph<T> g;
        g.set_recording(false);
        auto y1 = forward(model, g, x, Mode::eval);
        auto y2 = forward(narrow, g, x, Mode::eval);
        for (std::size_t i = 0; i < y1->numel(); ++i)
            worst = std::max(worst,
                             std::abs(static_cast<double>(y1->data[i]) -
                                      static_cast<double>(y2->data[i])));
    }
    checkpoint::save(narrow, out_path);
    const auto before = metrics::model_stats(model.spec);
    const auto after = metrics::model_stats(narrow.spec);
    std::printf("max |masked - compacted| over 100 random inputs: %.3g\n", worst);
    std::printf("params %zu -> %zu, flops %zu -> %zu\n", before.params_total, after.params_total,
                before.flops_total, after.flops_total);
    std::printf("wrote %s\n", out_path.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

template <class T>
int run_report(const RunConfig& cfg, const std::string& ckpt) {
    auto model = checkpoint::load<T>(ckpt);
    std::filesystem::create_directories(cfg.out_dir);
    const auto stats = metrics::model_stats(model.spec);
    {
        csvio::Writer stats_csv(cfg.out_dir + "/stats.csv", {"layer", "params", "flops"});
        for (const auto& ls : stats.per_layer)
            stats_csv.row({csvio::num(ls.layer), csvio::num(ls.params), csvio::num(ls.flops)});
    }
    auto state = ScalingState<T>::gather(model);
    const auto rep = pruner::prune_report(state);
    {
        csvio::Writer gcsv(cfg.out_dir + "/gammas.csv", {"rank", "layer", "filter", "gamma_abs"});
        std::size_t rank = 1;
        for (const auto& e : rep.sorted_gammas)
            gcsv.row({csvio::num(rank++), csvio::num(e.layer), csvio::num(e.filter),
                      csvio::num(e.gamma_abs)});
    }
    std::printf("params %zu, flops/sample %zu\n", stats.params_total, stats.flops_total);
    for (std::size_t i = 0; i < rep.survivors.size(); ++i)
        std::printf("layer %zu: %zu/%zu filters remained\n", rep.owner_layers[i],
                    rep.survivors[i], rep.totals[i]);
    std::printf("gamma_R %.6g gamma_P %.6g\n", rep.gamma_R, rep.gamma_P);
    std::printf("wrote %s/stats.csv and %s/gammas.csv\n", cfg.out_dir.c_str(),
                cfg.out_dir.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

inline int run_gradcheck(std::size_t trials, double tol, std::uint64_t seed) {
    const bool ok = gradcheck::run_suite<double>(trials, tol, seed, [](const std::string& line) {
        std::printf("%s\n", line.c_str());
    });
    if (!ok) throw NumericError("gradcheck failed");
    return 0;
}

}  // namespace taper::cli
