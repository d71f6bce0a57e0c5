#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "taper/objective.hpp"
#include "taper/pruner.hpp"
#include "taper/trainer.hpp"

namespace taper::gradcheck {

// Central finite difference of eval() with respect to every coordinate of t.
template <class T, class F>
std::vector<double> finite_diff(Tensor<T>& t, F&& eval, double h = 1e-5) {
    std::vector<double> out(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const T saved = t.data[i];
        t.data[i] = saved + static_cast<T>(h);
        const double f1 = eval();
        t.data[i] = saved - static_cast<T>(h);
        const double f2 = eval();
        t.data[i] = saved;
        out[i] = (f1 - f2) / (2.0 * h);
    }
    return out;
}

inline double rel_err(double analytic, double numeric) {
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / denom;
}

struct CheckResult {
    bool ok = true;
    double max_rel_err = 0;
    std::string worst;  // description of the worst coordinate
};

// Builds a small random network + random objective weights + random mask and
// compares every parameter gradient of the full objective against central
// finite differences.
template <class T = double>
CheckResult check_random_config(std::uint64_t seed, double tol = 1e-4) {
    Rng rng(seed);

    NetworkSpec spec;
    const std::size_t c = 1 + rng.uniform_int(3);
    const std::size_t hw = 5 + rng.uniform_int(3);
    spec.input_shape = {c, hw, hw};
    const bool use_mse = rng.bernoulli(0.25);
    spec.task = use_mse ? TaskKind::reconstruction : TaskKind::classification;

    const std::size_t conv_units = 1 + rng.uniform_int(2);
    for (std::size_t u = 0; u < conv_units; ++u) {
        const std::size_t f = 2 + rng.uniform_int(3);
        spec.layers.push_back(LayerConfig::conv_(f, 3, 1, 1));
        spec.layers.push_back(rng.bernoulli(0.5) ? LayerConfig::batchnorm_()
                                                 : LayerConfig::scaling_());
        spec.layers.push_back(LayerConfig::relu_());
    }
    std::size_t k_out = 4;
    if (use_mse) {
        // reconstruction head: map back to the input shape
        spec.layers.push_back(LayerConfig::conv_(c, 3, 1, 1));
    } else {
        if (rng.bernoulli(0.5)) spec.layers.push_back(LayerConfig::maxpool_(2));
        spec.layers.push_back(LayerConfig::flatten_());
        if (rng.bernoulli(0.5)) {
            spec.layers.push_back(LayerConfig::dense_(3 + rng.uniform_int(3)));
            spec.layers.push_back(LayerConfig::batchnorm_());
            spec.layers.push_back(LayerConfig::relu_());
        }
        k_out = 2 + rng.uniform_int(3);
        spec.layers.push_back(LayerConfig::dense_(k_out));
    }

    auto model = build<T>(spec, rng.next_u64());
    auto state = ScalingState<T>::gather(model);

    // randomize gammas/betas away from the init constants
    for (const auto& h : state.hosts()) {
        auto& st = model.layers[h.host];
        for (auto& v : st.gamma->data) v = static_cast<T>(0.4 + 0.6 * rng.uniform());
        if (st.beta) {
            for (auto& v : st.beta->data) v = static_cast<T>(0.2 * rng.normal());
        }
        if (!st.running_mean.empty()) {
            for (auto& v : st.running_mean) v = static_cast<T>(0.1 * rng.normal());
            for (auto& v : st.running_var) v = static_cast<T>(0.5 + rng.uniform());
        }
    }

    // random mask with at least one survivor per unit
    std::vector<std::size_t> pruned;
    for (const auto& h : state.hosts()) {
        const std::size_t keep = h.offset + rng.uniform_int(h.count);
        for (std::size_t i = 0; i < h.count; ++i) {
            const std::size_t flat = h.offset + i;
            if (flat != keep && rng.bernoulli(0.3)) pruned.push_back(flat);
        }
    }
    pruner::apply_mask(state, pruned);
    // nudge masked gammas to the "regrown between maskings" state: gamma == 0
    // parks the whole channel on the relu kink, where a finite-difference
    // probe is meaningless
    for (std::size_t flat : pruned)
        state.set_gamma(flat, static_cast<T>(0.02 + 0.05 * rng.uniform()));

    ObjectiveConfig cfg;
    cfg.task = spec.task;
    const double l_choices[] = {0.0, 1e-3, 1e-2, 0.1};
    cfg.lambda1 = l_choices[rng.uniform_int(4)];
    cfg.lambda2 = l_choices[rng.uniform_int(4)];
    cfg.lambda3 = l_choices[rng.uniform_int(4)];

    const std::size_t n = 2 + rng.uniform_int(2);
    auto input = make_tensor<T>({n, c, hw, hw});
    for (auto& v : input->data) v = static_cast<T>(rng.normal());
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_int(k_out));

    auto eval = [&]() -> double {
        Graph<T> g;
        g.set_recording(false);
        auto tl = objective::total_loss(g, model, input, labels, TensorPtr<T>{}, state, cfg,
                                        Mode::train);
        return tl.breakdown.total;
    };

    Graph<T> g;
    auto tl = objective::total_loss(g, model, input, labels, TensorPtr<T>{}, state, cfg,
                                    Mode::train);
    model.zero_grad();
    g.backward(tl.loss);

    CheckResult res;
    for (const auto& pr : model.parameters()) {
        Tensor<T>& t = *pr.tensor;
        const auto fd = finite_diff(t, eval);
        const char* cls = pr.cls == ParamClass::weight ? "weight"
                          : pr.cls == ParamClass::bias ? "bias"
                          : pr.cls == ParamClass::gamma ? "gamma"
                                                        : "beta";
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double a = t.has_grad() ? static_cast<double>(t.grad[i]) : 0.0;
            const double e = rel_err(a, fd[i]);
            if (e > res.max_rel_err) {
                res.max_rel_err = e;
                res.worst = "layer " + std::to_string(pr.layer) + " " +
                            layer_kind_name(model.spec.layers[pr.layer].kind) + " " + cls + "[" +
                            std::to_string(i) + "] analytic=" + std::to_string(a) +
                            " fd=" + std::to_string(fd[i]);
            }
        }
    }
    res.ok = res.max_rel_err < tol;
    return res;
}

// The randomized suite; prints one line per failing trial via `report`.
template <class T = double>
bool run_suite(std::size_t trials, double tol, std::uint64_t seed,
               const std::function<void(const std::string&)>& report = {}) {
    bool ok = true;
    double worst = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        const auto res = check_random_config<T>(Rng::mix(seed, t), tol);
        worst = std::max(worst, res.max_rel_err);
        if (!res.ok) {
            ok = false;
            if (report)
                report("trial " + std::to_string(t) + ": max rel err " +
                       std::to_string(res.max_rel_err) + " at " + res.worst);
        }
    }
    if (report)
        report("gradcheck: " + std::to_string(trials) + " trials, worst rel err " +
               std::to_string(worst) + (ok ? " (pass)" : " (FAIL)"));
    return ok;
}

}  // namespace taper::gradcheck
