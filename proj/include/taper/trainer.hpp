#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "taper/data.hpp"
#include "taper/objective.hpp"
#include "taper/pruner.hpp"

namespace taper {

enum class OptimizerKind : std::uint32_t { sgd_nesterov = 0, adam = 1 };

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::sgd_nesterov;
    double lr = 0.1;
    // (epoch fraction, multiplicative factor), fractions strictly increasing
    std::vector<std::pair<double, double>> lr_drops = {{0.5, 0.1}, {0.75, 0.1}};
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 64;
    std::size_t epochs = 160;
    std::uint64_t seed = 0;
    bool determinism = false;
    bool freeze_pruned = false;
    std::size_t survivor_floor = 1;
    bool augment = false;
    std::size_t augment_pad = 4;

    void check() const {
        if (lr <= 0) throw ContractError("train config: lr must be positive");
        if (epochs == 0 || batch_size == 0)
            throw ContractError("train config: epochs and batch size must be positive");
        double prev = 0.0;
        for (const auto& [frac, factor] : lr_drops) {
            if (!(frac > 0.0 && frac < 1.0))
                throw ContractError("train config: lr drop fractions must lie in (0,1)");
            if (frac <= prev)
                throw ContractError("train config: lr drop fractions must be strictly increasing");
            if (factor <= 0) throw ContractError("train config: lr drop factor must be positive");
            prev = frac;
        }
    }
};

namespace trainer {

// Piecewise-constant schedule; drop i applies from epoch floor(frac_i * N) + 1.
inline double lr_at(const TrainConfig& cfg, std::size_t epoch) {
    cfg.check();
    if (epoch < 1 || epoch > cfg.epochs)
        throw ContractError("lr_at: epoch out of range");
    double lr = cfg.lr;
    for (const auto& [frac, factor] : cfg.lr_drops) {
        const std::size_t at =
            static_cast<std::size_t>(std::floor(frac * static_cast<double>(cfg.epochs))) + 1;
        if (epoch >= at) lr *= factor;
    }
    return lr;
}

// ---------------------------------------------------------------------------
// optimizer steps (plain-buffer forms, kept free for direct testing)
// ---------------------------------------------------------------------------

// Nesterov momentum without dampening:
//   g~ = g + wd * p;  v = mu * v + g~;  p -= lr * (g~ + mu * v)
template <class T>
void sgd_nesterov_step(T* p, const T* g, T* v, std::size_t n, double lr, double momentum,
                       double weight_decay) {
    const T mu = static_cast<T>(momentum);
    const T wd = static_cast<T>(weight_decay);
    const T step = static_cast<T>(lr);
    for (std::size_t i = 0; i < n; ++i) {
        const T gt = g[i] + wd * p[i];
        v[i] = mu * v[i] + gt;
        p[i] -= step * (gt + mu * v[i]);
    }
}

// Standard Adam with bias correction; t is the 1-based step count.
template <class T>
void adam_step(T* p, const T* g, T* m, T* v, std::size_t n, std::size_t t, double lr,
               double beta1, double beta2, double eps) {
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < n; ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * gi;
        const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        p[i] -= static_cast<T>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
    }
}

// ---------------------------------------------------------------------------
// stateful optimizer over a model's parameters
// ---------------------------------------------------------------------------

template <class T>
class Optimizer {
  public:
    Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}

    // Throws NumericError (before touching any parameter) if any gradient is
    // non-finite. gamma and beta parameters are exempt from weight decay.
    void step(const std::vector<ParamRef<T>>& params, double lr) {
        for (const auto& pr : params) {
            if (!pr.tensor->has_grad()) continue;
            if (!pr.tensor->grad_finite())
                throw NumericError("optimizer: non-finite gradient, step aborted");
        }
        ++t_;
        for (const auto& pr : params) {
            Tensor<T>& t = *pr.tensor;
            if (!t.has_grad()) continue;
            const bool decay =
                pr.cls == ParamClass::weight || pr.cls == ParamClass::bias;
            const double wd = decay ? cfg_.weight_decay : 0.0;
            if (cfg_.optimizer == OptimizerKind::sgd_nesterov) {
                auto& v = buffer(slot1_, t);
                sgd_nesterov_step(t.data.data(), t.grad.data(), v.data(), t.numel(), lr,
                                  cfg_.momentum, wd);
            } else {
                auto& m = buffer(slot1_, t);
                auto& v = buffer(slot2_, t);
                // decoupled from the gradient only through g~ = g + wd p
                if (wd != 0.0) {
                    for (std::size_t i = 0; i < t.numel(); ++i)
                        t.grad[i] += static_cast<T>(wd) * t.data[i];
                }
                adam_step(t.data.data(), t.grad.data(), m.data(), v.data(), t.numel(), t_, lr,
                          cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps);
            }
        }
    }

    // Clears momentum/moment state of one entry (used when freezing pruned
    // filters in place).
    void zero_state_entry(const TensorPtr<T>& t, std::size_t idx) {
        auto z = [&](std::unordered_map<const Tensor<T>*, std::vector<T>>& slot) {
            auto it = slot.find(t.get());
            if (it != slot.end() && idx < it->second.size()) it->second[idx] = T(0);
        };
        z(slot1_);
        z(slot2_);
    }

    std::size_t steps() const { return t_; }

  private:
    std::vector<T>& buffer(std::unordered_map<const Tensor<T>*, std::vector<T>>& slot,
                           const Tensor<T>& t) {
        auto [it, inserted] = slot.try_emplace(&t, t.numel(), T(0));
        return it->second;
    }

    TrainConfig cfg_;
    std::size_t t_ = 0;
    std::unordered_map<const Tensor<T>*, std::vector<T>> slot1_;  // velocity / first moment
    std::unordered_map<const Tensor<T>*, std::vector<T>> slot2_;  // second moment
};

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

// Classification: top-1 accuracy in [0,1]. Reconstruction: PSNR in dB with
// peak = max - min of the target values.
template <class T>
double evaluate(Model<T>& model, const data::Dataset<T>& ds, TaskKind task,
                std::size_t batch_size = 256) {
    data::BatchIterator<T> it(ds, batch_size, 0, {}, /*shuffle=*/false);
    it.begin_epoch(1);
    data::Batch<T> batch;
    if (task == TaskKind::classification) {
        std::size_t correct = 0, total = 0;
        while (it.next(batch)) {
            Graph<T> g;
            g.set_recording(false);
            auto out = forward(model, g, batch.images, Mode::eval);
            const std::size_t n = out->dim(0), k = out->dim(1);
            for (std::size_t i = 0; i < n; ++i) {
                const T* row = out->data.data() + i * k;
                std::size_t best = 0;
                for (std::size_t j = 1; j < k; ++j) {
                    if (row[j] > row[best]) best = j;
                }
                correct += static_cast<int>(best) == batch.labels[i];
            }
            total += n;
        }
        return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    }
    double se = 0.0;
    std::size_t count = 0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    while (it.next(batch)) {
        Graph<T> g;
        g.set_recording(false);
        auto out = forward(model, g, batch.images, Mode::eval);
        for (std::size_t i = 0; i < out->numel(); ++i) {
            const double d = static_cast<double>(out->data[i]) -
                             static_cast<double>(batch.images->data[i]);
            se += d * d;
            lo = std::min(lo, static_cast<double>(batch.images->data[i]));
            hi = std::max(hi, static_cast<double>(batch.images->data[i]));
        }
        count += out->numel();
    }
    if (!count) return 0.0;
    const double mse_v = se / static_cast<double>(count);
    const double peak = hi > lo ? hi - lo : 1.0;
    if (mse_v == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse_v);
}

// ---------------------------------------------------------------------------
// fit: the online-pruning training loop
// ---------------------------------------------------------------------------

struct EpochLog {
    std::size_t epoch = 0;
    double ratio = 0;
    objective::LossBreakdown mean;  // per-step means of the raw components
    double gamma_R_premask = 0;     // diagnostics at this epoch's partition,
    double gamma_P_premask = 0;     // measured before zeroing
    double eval_metric = 0;         // accuracy or PSNR
    std::vector<std::size_t> survivors;
    std::size_t readmitted = 0;  // survivor-floor re-admissions
};

struct FitHooks {
    std::function<void(std::size_t epoch, const pruner::PruneReport&)> on_epoch_start;
    std::function<void(std::size_t epoch, std::size_t step, const objective::LossBreakdown&)>
        on_step;
    std::function<void(const EpochLog&)> on_epoch_end;
};

template <class T>
struct FitResult {
    Model<T> compacted;
    std::vector<EpochLog> logs;
    double final_metric = 0;  // evaluated on the compacted model
    // the deployed mask's estimated pruning loss, measured on the trained
    // gammas after the last epoch and before they are re-silenced
    double final_gamma_R = 1;
    double final_gamma_P = 0;
    pruner::PruneReport final_report;  // same pre-silence state
};

namespace detail {

// Pre-mask report for a freshly computed partition: survivors/ratios reflect
// `part`, gamma values are the current (not yet zeroed) ones.
template <class T>
pruner::PruneReport premask_report(const ScalingState<T>& state,
                                   const pruner::Partition& part) {
    pruner::PruneReport rep;
    const auto gammas = state.gammas();
    std::vector<std::uint8_t> pruned(gammas.size(), 0);
    for (std::size_t i : part.pruned) pruned[i] = 1;
    for (const auto& h : state.hosts()) {
        rep.owner_layers.push_back(h.owner);
        rep.totals.push_back(h.count);
        std::size_t alive = 0;
        for (std::size_t i = 0; i < h.count; ++i) {
            if (!pruned[h.offset + i]) ++alive;
            rep.sorted_gammas.push_back(
                {h.owner, i, std::abs(static_cast<double>(gammas[h.offset + i]))});
        }
        rep.survivors.push_back(alive);
    }
    std::stable_sort(rep.sorted_gammas.begin(), rep.sorted_gammas.end(),
                     [](const pruner::GammaEntry& a, const pruner::GammaEntry& b) {
                         return a.gamma_abs > b.gamma_abs;
                     });
    double numer = 0, denom = 0;
    for (std::size_t i = 0; i < gammas.size(); ++i) {
        denom += static_cast<double>(gammas[i]);
        if (!pruned[i]) numer += static_cast<double>(gammas[i]);
    }
    if (denom != 0.0) {
        rep.gamma_R = numer / denom;
        rep.gamma_P = 1.0 - rep.gamma_R;
    } else {
        rep.gamma_R = rep.gamma_P = std::numeric_limits<double>::quiet_NaN();
    }
    return rep;
}

template <class T>
void freeze_pruned_entries(const ScalingState<T>& state, Optimizer<T>& opt) {
    for (const auto& h : state.hosts()) {
        auto& st = state.model().layers[h.host];
        for (std::size_t i = 0; i < h.count; ++i) {
            if (state.mask_at(h.offset + i)) continue;
            if (st.gamma->has_grad()) st.gamma->grad[i] = T(0);
            opt.zero_state_entry(st.gamma, i);
            if (st.beta) {
                if (st.beta->has_grad()) st.beta->grad[i] = T(0);
                opt.zero_state_entry(st.beta, i);
            }
        }
    }
}

}  // namespace detail

// Per epoch: schedule the ratio, re-partition over current gammas, turn off
// the pruned set, then run the minibatch loop on the integrated objective.
// After the last epoch the mask is realized as a compacted (narrower) model.
// Throws CompactionError if a layer ends with zero survivors; `model` keeps
// its trained, masked state either way.
template <class T>
FitResult<T> fit(Model<T>& model, const data::Dataset<T>& train_ds,
                 const data::Dataset<T>& test_ds, const ObjectiveConfig& ocfg,
                 const PruneSchedule& schedule, const TrainConfig& tcfg,
                 const FitHooks* hooks = nullptr) {
    tcfg.check();
    schedule.check();
    if (schedule.epochs != tcfg.epochs)
        throw ContractError("fit: prune schedule epochs != train epochs");

    auto state = ScalingState<T>::gather(model);
    Optimizer<T> opt(tcfg);
    data::AugmentConfig aug{.pad = tcfg.augment_pad, .flip_prob = 0.5, .enabled = tcfg.augment};
    data::BatchIterator<T> it(train_ds, tcfg.batch_size, tcfg.seed, aug);

    FitResult<T> result;
    const auto params = model.parameters();

    for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        const double ratio = pruner::ratio_at_epoch(schedule, epoch);
        auto part = pruner::partition(state, ratio);
        const std::size_t readmitted =
            pruner::enforce_survivor_floor(state, part, tcfg.survivor_floor);
        const auto report = detail::premask_report(state, part);
        if (hooks && hooks->on_epoch_start) hooks->on_epoch_start(epoch, report);
        pruner::apply_mask(state, part.pruned);

        const double lr = lr_at(tcfg, epoch);
        it.begin_epoch(epoch);
        data::Batch<T> batch;
        objective::LossBreakdown mean;
        std::size_t steps = 0;
        while (it.next(batch)) {
            Graph<T> g;
            auto tl = objective::total_loss(g, model, batch.images, batch.labels, TensorPtr<T>{},
                                            state, ocfg, Mode::train);
            if (!std::isfinite(tl.breakdown.total))
                throw NumericError("fit: non-finite loss at epoch " + std::to_string(epoch));
            model.zero_grad();
            g.backward(tl.loss);
            if (tcfg.freeze_pruned) detail::freeze_pruned_entries(state, opt);
            opt.step(params, lr);
            mean.task += tl.breakdown.task;
            mean.sparsity += tl.breakdown.sparsity;
            mean.gamma_R += tl.breakdown.gamma_R;
            mean.gamma_P += tl.breakdown.gamma_P;
            mean.diversity += tl.breakdown.diversity;
            mean.total += tl.breakdown.total;
            mean.diversity_pairs_skipped += tl.breakdown.diversity_pairs_skipped;
            if (hooks && hooks->on_step) hooks->on_step(epoch, steps, tl.breakdown);
            ++steps;
        }
        if (steps) {
            const double inv = 1.0 / static_cast<double>(steps);
            mean.task *= inv;
            mean.sparsity *= inv;
            mean.gamma_R *= inv;
            mean.gamma_P *= inv;
            mean.diversity *= inv;
            mean.total *= inv;
        }

        EpochLog log;
        log.epoch = epoch;
        log.ratio = ratio;
        log.mean = mean;
        log.gamma_R_premask = report.gamma_R;
        log.gamma_P_premask = report.gamma_P;
        log.survivors = report.survivors;
        log.readmitted = readmitted;
        log.eval_metric = evaluate(model, test_ds, ocfg.task);
        if (hooks && hooks->on_epoch_end) hooks->on_epoch_end(log);
        result.logs.push_back(std::move(log));
    }

    // the final pre-mask estimate: trained gamma values against the deployed
    // (last epoch's) mask, before re-silencing
    const auto [fr, fp] = objective::pruning_ratio_values(state);
    result.final_gamma_R = fr;
    result.final_gamma_P = fp;
    result.final_report = pruner::prune_report(state);

    // re-silence the final mask: pruned gammas may have drifted off zero
    // during the last epoch's steps, and the deployed network is the masked
    // one
    std::vector<std::size_t> final_pruned;
    for (std::size_t i = 0; i < state.total(); ++i) {
        if (!state.mask_at(i)) final_pruned.push_back(i);
    }
    pruner::apply_mask(state, final_pruned);

    auto plan = pruner::plan_compaction(state);
    result.compacted = pruner::compact(model, plan);
    result.final_metric = evaluate(result.compacted, test_ds, ocfg.task);
    return result;
}

}  // namespace trainer
}  // namespace taper
