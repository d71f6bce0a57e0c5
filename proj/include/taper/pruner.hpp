#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "taper/objective.hpp"

namespace taper {

// Linear ramp of the pruning ratio from start_ratio (epoch 1) to target_ratio
// (epoch N).
struct PruneSchedule {
    double target_ratio = 0.0;  // Pr_N in [0, 1)
    std::size_t epochs = 1;     // N
    double start_ratio = 0.0;

    void check() const {
        if (!(target_ratio >= 0.0 && target_ratio < 1.0))
            throw ContractError("prune schedule: target ratio must be in [0,1)");
        if (epochs == 0) throw ContractError("prune schedule: epochs must be positive");
        if (!(start_ratio >= 0.0 && start_ratio <= target_ratio))
            throw ContractError("prune schedule: start ratio must be in [0, target]");
    }
};

namespace pruner {

inline double ratio_at_epoch(const PruneSchedule& s, std::size_t n) {
    s.check();
    if (n < 1 || n > s.epochs)
        throw ContractError("ratio_at_epoch: epoch " + std::to_string(n) + " outside [1," +
                            std::to_string(s.epochs) + "]");
    if (s.epochs == 1) return s.target_ratio;
    return s.start_ratio + (s.target_ratio - s.start_ratio) * static_cast<double>(n - 1) /
                               static_cast<double>(s.epochs - 1);
}

struct Partition {
    std::vector<std::size_t> pruned;    // sorted ascending
    std::vector<std::size_t> remained;  // sorted ascending
};

// Global percentile partition: exactly floor(ratio * |Gamma|) filters with the
// smallest |gamma| are pruned; ties break toward the lower flat index.
template <class T>
Partition partition(const ScalingState<T>& state, double ratio) {
    if (!(ratio >= 0.0 && ratio < 1.0))
        throw ContractError("partition: ratio must be in [0,1)");
    const auto gammas = state.gammas();
    const std::size_t total = gammas.size();
    const std::size_t count =
        static_cast<std::size_t>(std::floor(ratio * static_cast<double>(total)));

    std::vector<std::size_t> order(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const T va = std::abs(gammas[a]), vb = std::abs(gammas[b]);
        if (va != vb) return va < vb;
        return a < b;
    });

    Partition p;
    p.pruned.assign(order.begin(), order.begin() + count);
    p.remained.assign(order.begin() + count, order.end());
    std::sort(p.pruned.begin(), p.pruned.end());
    std::sort(p.remained.begin(), p.remained.end());
    return p;
}

// Optional per-layer survivor floor: re-admit the largest-|gamma| pruned
// filters of any unit that the partition would leave with fewer than `floor`
// survivors. Returns how many filters were re-admitted.
template <class T>
std::size_t enforce_survivor_floor(const ScalingState<T>& state, Partition& p,
                                   std::size_t floor_per_layer) {
    if (floor_per_layer == 0) return 0;
    const auto gammas = state.gammas();
    std::vector<std::uint8_t> pruned_set(gammas.size(), 0);
    for (std::size_t i : p.pruned) pruned_set[i] = 1;

    std::size_t readmitted = 0;
    for (const auto& h : state.hosts()) {
        std::size_t alive = 0;
        for (std::size_t i = 0; i < h.count; ++i) {
            if (!pruned_set[h.offset + i]) ++alive;
        }
        while (alive < std::min(floor_per_layer, h.count)) {
            // largest |gamma| among this unit's pruned filters; tie -> lower index
            std::size_t best = h.count;
            T best_v = T(-1);
            for (std::size_t i = 0; i < h.count; ++i) {
                const std::size_t flat = h.offset + i;
                if (!pruned_set[flat]) continue;
                const T v = std::abs(gammas[flat]);
                if (v > best_v) {
                    best_v = v;
                    best = i;
                }
            }
            pruned_set[h.offset + best] = 0;
            ++alive;
            ++readmitted;
        }
    }
    if (readmitted) {
        p.pruned.clear();
        p.remained.clear();
        for (std::size_t i = 0; i < gammas.size(); ++i) {
            (pruned_set[i] ? p.pruned : p.remained).push_back(i);
        }
    }
    return readmitted;
}

// Turn-off: set each pruned filter's gamma (and beta, for batchnorm hosts) to
// exact zero and update the mask. Filters absent from `pruned` are unmasked,
// so a filter whose gamma regrew past the threshold re-enters the remained
// set when the partition is recomputed.
template <class T>
void apply_mask(ScalingState<T>& state, const std::vector<std::size_t>& pruned) {
    std::vector<std::uint8_t> pruned_set(state.total(), 0);
    for (std::size_t i : pruned) {
        if (i >= state.total())
            throw IndexError("apply_mask: filter index " + std::to_string(i) + " out of range");
        pruned_set[i] = 1;
    }
    for (std::size_t i = 0; i < state.total(); ++i) {
        if (pruned_set[i]) {
            state.silence(i);
            state.set_mask(i, 0);
        } else {
            state.set_mask(i, 1);
        }
    }
}

// ---------------------------------------------------------------------------
// compaction
// ---------------------------------------------------------------------------

struct CompactionPlan {
    std::vector<HostInfo> hosts;
    // per host, sorted surviving filter indices (within the unit)
    std::vector<std::vector<std::size_t>> survivors;
    // per host, the downstream conv/dense whose input channels are sliced
    std::vector<std::size_t> consumers;
};

template <class T>
CompactionPlan plan_compaction(const ScalingState<T>& state) {
    const Model<T>& model = state.model();
    CompactionPlan plan;
    plan.hosts = state.hosts();
    for (const auto& h : plan.hosts) {
        std::vector<std::size_t> alive;
        for (std::size_t i = 0; i < h.count; ++i) {
            if (state.mask_at(h.offset + i)) alive.push_back(i);
        }
        if (alive.empty())
            throw CompactionError("compaction: layer " + std::to_string(h.owner) + " (" +
                                      layer_kind_name(model.spec.layers[h.owner].kind) +
                                      ") has no surviving filters",
                                  h.owner);
        plan.survivors.push_back(std::move(alive));

        std::size_t consumer = model.spec.layers.size();
        for (std::size_t j = h.host + 1; j < model.spec.layers.size(); ++j) {
            const LayerKind k = model.spec.layers[j].kind;
            if (k == LayerKind::dense || k == LayerKind::conv2d) {
                consumer = j;
                break;
            }
        }
        if (consumer == model.spec.layers.size())
            throw CompactionError("compaction: prunable layer " + std::to_string(h.owner) +
                                      " has no downstream consumer",
                                  h.owner);
        plan.consumers.push_back(consumer);
    }
    return plan;
}

namespace detail {

template <class T>
TensorPtr<T> slice_rows(const TensorPtr<T>& t, const std::vector<std::size_t>& rows) {
    Shape shape = t->shape;
    const std::size_t stride = t->numel() / t->dim(0);
    shape[0] = rows.size();
    std::vector<T> data;
    data.reserve(rows.size() * stride);
    for (std::size_t r : rows)
        data.insert(data.end(), t->data.begin() + r * stride, t->data.begin() + (r + 1) * stride);
    auto out = make_tensor<T>(shape, std::move(data));
    out->requires_grad = t->requires_grad;
    return out;
}

template <class T>
std::vector<T> slice_vec(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(v[i]);
    return out;
}

// slice dim-1 (input channels) of a conv weight [f x c x kh x kw]
template <class T>
TensorPtr<T> slice_conv_channels(const TensorPtr<T>& t, const std::vector<std::size_t>& chans) {
    const std::size_t f = t->dim(0), c = t->dim(1), kk = t->dim(2) * t->dim(3);
    std::vector<T> data;
    data.reserve(f * chans.size() * kk);
    for (std::size_t ff = 0; ff < f; ++ff) {
        for (std::size_t ch : chans) {
            const std::size_t off = (ff * c + ch) * kk;
            data.insert(data.end(), t->data.begin() + off, t->data.begin() + off + kk);
        }
    }
    auto out = make_tensor<T>(Shape{f, chans.size(), t->dim(2), t->dim(3)}, std::move(data));
    out->requires_grad = t->requires_grad;
    return out;
}

// slice columns of a dense weight [out x in], where each input channel spans
// `spatial` consecutive columns
template <class T>
TensorPtr<T> slice_dense_columns(const TensorPtr<T>& t, const std::vector<std::size_t>& chans,
                                 std::size_t spatial) {
    const std::size_t out_f = t->dim(0), in = t->dim(1);
    std::vector<T> data;
    data.reserve(out_f * chans.size() * spatial);
    for (std::size_t o = 0; o < out_f; ++o) {
        for (std::size_t ch : chans) {
            const std::size_t off = o * in + ch * spatial;
            data.insert(data.end(), t->data.begin() + off, t->data.begin() + off + spatial);
        }
    }
    auto out = make_tensor<T>(Shape{out_f, chans.size() * spatial}, std::move(data));
    out->requires_grad = t->requires_grad;
    return out;
}

}  // namespace detail

// Builds the narrower network implied by the mask and copies surviving weight
// slices verbatim. Eval-mode forward of the result matches the masked model
// (masked channels are exactly zero, so removing them does not perturb any
// accumulation).
template <class T>
Model<T> compact(const Model<T>& model, const CompactionPlan& plan) {
    // deep-copy the model first
    Model<T> out;
    out.spec = model.spec;
    for (const auto& st : model.layers) {
        LayerState<T> c;
        c.kind = st.kind;
        auto clone = [](const TensorPtr<T>& t) -> TensorPtr<T> {
            if (!t) return nullptr;
            auto r = make_tensor<T>(t->shape, t->data);
            r->requires_grad = t->requires_grad;
            return r;
        };
        c.weight = clone(st.weight);
        c.bias = clone(st.bias);
        c.gamma = clone(st.gamma);
        c.beta = clone(st.beta);
        c.running_mean = st.running_mean;
        c.running_var = st.running_var;
        out.layers.push_back(std::move(c));
    }

    for (std::size_t hi = 0; hi < plan.hosts.size(); ++hi) {
        const HostInfo& h = plan.hosts[hi];
        const auto& alive = plan.survivors[hi];
        const std::size_t orig_filters = out.spec.layers[h.owner].out_filters;

        // producer: slice output filters
        auto& owner_st = out.layers[h.owner];
        owner_st.weight = detail::slice_rows(owner_st.weight, alive);
        if (owner_st.bias) {
            owner_st.bias = make_tensor<T>(Shape{alive.size()},
                                           detail::slice_vec(owner_st.bias->data, alive));
            owner_st.bias->requires_grad = true;
        }
        out.spec.layers[h.owner].out_filters = alive.size();

        // host: slice gamma/beta/running stats
        auto& host_st = out.layers[h.host];
        host_st.gamma = make_tensor<T>(Shape{alive.size()},
                                       detail::slice_vec(host_st.gamma->data, alive));
        host_st.gamma->requires_grad = true;
        if (host_st.beta) {
            host_st.beta = make_tensor<T>(Shape{alive.size()},
                                          detail::slice_vec(host_st.beta->data, alive));
            host_st.beta->requires_grad = true;
        }
        if (!host_st.running_mean.empty()) {
            host_st.running_mean = detail::slice_vec(host_st.running_mean, alive);
            host_st.running_var = detail::slice_vec(host_st.running_var, alive);
        }

        // consumer: slice input channels
        const std::size_t ci = plan.consumers[hi];
        auto& consumer_st = out.layers[ci];
        if (consumer_st.kind == LayerKind::conv2d) {
            consumer_st.weight = detail::slice_conv_channels(consumer_st.weight, alive);
        } else {
            const std::size_t spatial = consumer_st.weight->dim(1) / orig_filters;
            consumer_st.weight = detail::slice_dense_columns(consumer_st.weight, alive, spatial);
        }
    }

    // fresh mask: everything in the compacted net is remained
    out.mask.assign(total_prunable_filters(out.spec), 1);
    validate(out.spec);
    return out;
}

// ---------------------------------------------------------------------------
// reporting
// ---------------------------------------------------------------------------

struct GammaEntry {
    std::size_t layer;   // owner layer index
    std::size_t filter;  // index within the unit
    double gamma_abs;
};

struct PruneReport {
    std::vector<std::size_t> owner_layers;
    std::vector<std::size_t> survivors;  // per prunable unit
    std::vector<std::size_t> totals;     // per prunable unit
    std::vector<GammaEntry> sorted_gammas;  // descending |gamma|
    double gamma_R = 0;
    double gamma_P = 0;
};

template <class T>
PruneReport prune_report(const ScalingState<T>& state) {
    PruneReport rep;
    const auto gammas = state.gammas();
    for (const auto& h : state.hosts()) {
        rep.owner_layers.push_back(h.owner);
        rep.totals.push_back(h.count);
        std::size_t alive = 0;
        for (std::size_t i = 0; i < h.count; ++i) {
            if (state.mask_at(h.offset + i)) ++alive;
            rep.sorted_gammas.push_back(
                {h.owner, i, std::abs(static_cast<double>(gammas[h.offset + i]))});
        }
        rep.survivors.push_back(alive);
    }
    std::stable_sort(rep.sorted_gammas.begin(), rep.sorted_gammas.end(),
                     [](const GammaEntry& a, const GammaEntry& b) {
                         return a.gamma_abs > b.gamma_abs;
                     });
    const auto [r, p] = objective::pruning_ratio_values(state);
    rep.gamma_R = r;
    rep.gamma_P = p;
    return rep;
}

}  // namespace pruner
}  // namespace taper
