#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "taper/layers.hpp"
#include "taper/ops.hpp"

namespace taper {

// Weights of the integrated objective:
//   total = task + lambda1 * sum_{remained} |gamma|
//                - lambda2 * gamma_R - lambda3 * sum_l Div(layer l)
struct ObjectiveConfig {
    double lambda1 = 1e-4;
    double lambda2 = 1e-4;
    double lambda3 = 1e-6;
    TaskKind task = TaskKind::classification;
};

// Live view over a model's scaling factors: the flat set of per-filter gammas
// across every prunable unit, plus the remained/pruned mask (stored on the
// model so checkpoints carry it).
template <class T>
class ScalingState {
  public:
    static ScalingState gather(Model<T>& model) {
        ScalingState s;
        s.model_ = &model;
        s.hosts_ = host_map(model.spec);
        std::size_t total = 0;
        for (const auto& h : s.hosts_) total += h.count;
        if (model.mask.size() != total)
            throw ContractError("scaling state: model mask length does not match host map");
        return s;
    }

    Model<T>& model() const { return *model_; }
    const std::vector<HostInfo>& hosts() const { return hosts_; }

    std::size_t total() const { return model_->mask.size(); }

    const HostInfo& host_of(std::size_t flat) const {
        for (const auto& h : hosts_) {
            if (flat >= h.offset && flat < h.offset + h.count) return h;
        }
        throw IndexError("scaling state: flat index " + std::to_string(flat) + " out of range");
    }

    // owner (conv/dense) layer index of a flat filter index
    std::size_t layer_of(std::size_t flat) const { return host_of(flat).owner; }

    T gamma(std::size_t flat) const {
        const HostInfo& h = host_of(flat);
        return model_->layers[h.host].gamma->data[flat - h.offset];
    }

    void set_gamma(std::size_t flat, T v) {
        const HostInfo& h = host_of(flat);
        model_->layers[h.host].gamma->data[flat - h.offset] = v;
    }

    // zeroes the host's beta as well (batchnorm hosts), so the channel output
    // is exactly zero
    void silence(std::size_t flat) {
        const HostInfo& h = host_of(flat);
        auto& st = model_->layers[h.host];
        st.gamma->data[flat - h.offset] = T(0);
        if (st.beta) st.beta->data[flat - h.offset] = T(0);
    }

    std::uint8_t mask_at(std::size_t flat) const { return model_->mask[flat]; }
    void set_mask(std::size_t flat, std::uint8_t v) { model_->mask[flat] = v; }
    const std::vector<std::uint8_t>& mask() const { return model_->mask; }

    std::vector<T> gammas() const {
        std::vector<T> out(total());
        for (const auto& h : hosts_) {
            const auto& gd = model_->layers[h.host].gamma->data;
            for (std::size_t i = 0; i < h.count; ++i) out[h.offset + i] = gd[i];
        }
        return out;
    }

    std::vector<std::uint8_t> mask_slice(const HostInfo& h) const {
        return std::vector<std::uint8_t>(model_->mask.begin() + h.offset,
                                         model_->mask.begin() + h.offset + h.count);
    }

  private:
    Model<T>* model_ = nullptr;
    std::vector<HostInfo> hosts_;
};

namespace objective {

// ---------------------------------------------------------------------------
// sparsity: sum of |gamma| over remained filters
// ---------------------------------------------------------------------------

template <class T>
TensorPtr<T> sparsity_term(Graph<T>& g, const ScalingState<T>& state) {
    TensorPtr<T> total;
    for (const auto& h : state.hosts()) {
        auto term = ops::masked_abs_sum(g, state.model().layers[h.host].gamma,
                                        state.mask_slice(h));
        total = total ? ops::add(g, total, term) : term;
    }
    if (!total) total = make_tensor<T>({1}, T(0));
    return total;
}

// ---------------------------------------------------------------------------
// pruning loss: gamma_R = sum_{remained} gamma / sum_all gamma (raw values,
// differentiable); gamma_P = 1 - gamma_R is the estimated pruning loss,
// reported for diagnostics
// ---------------------------------------------------------------------------

template <class T>
struct PruningRatio {
    TensorPtr<T> gamma_R;  // graph node
    T gamma_P;
};

template <class T>
PruningRatio<T> pruning_ratio_terms(Graph<T>& g, const ScalingState<T>& state) {
    TensorPtr<T> numer, denom;
    for (const auto& h : state.hosts()) {
        auto& gamma = state.model().layers[h.host].gamma;
        auto part = ops::masked_sum(g, gamma, state.mask_slice(h));
        numer = numer ? ops::add(g, numer, part) : part;
        auto all = ops::sum(g, gamma);
        denom = denom ? ops::add(g, denom, all) : all;
    }
    if (!denom || denom->data[0] == T(0))
        throw DegenerateError("pruning ratio: all scaling factors sum to zero");
    PruningRatio<T> out;
    out.gamma_R = ops::div_scalar(g, numer, denom);
    out.gamma_P = T(1) - out.gamma_R->data[0];
    return out;
}

// Plain-value variant for diagnostics; returns {gamma_R, gamma_P}, NaN when
// degenerate.
template <class T>
std::pair<double, double> pruning_ratio_values(const ScalingState<T>& state) {
    double numer = 0, denom = 0;
    const auto gs = state.gammas();
    for (std::size_t i = 0; i < gs.size(); ++i) {
        denom += static_cast<double>(gs[i]);
        if (state.mask_at(i)) numer += static_cast<double>(gs[i]);
    }
    if (denom == 0.0) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        return {nan, nan};
    }
    const double r = numer / denom;
    return {r, 1.0 - r};
}

// ---------------------------------------------------------------------------
// filter-wise diversity
// ---------------------------------------------------------------------------

constexpr double kNormEps = 1e-12;

// 1 - |<wi/|wi|, wj/|wj|>|; symmetric, 0 for collinear, 1 for orthogonal.
template <class T>
T pairwise_diversity(const T* wi, const T* wj, std::size_t d) {
    const T ni = std::sqrt(kern::dot(wi, wi, d));
    const T nj = std::sqrt(kern::dot(wj, wj, d));
    if (!(ni > T(kNormEps)) || !(nj > T(kNormEps)))
        throw UndefinedDiversityError("pairwise diversity: filter norm below " +
                                      std::to_string(kNormEps));
    const T s = kern::dot(wi, wj, d) / (ni * nj);
    const T div = T(1) - std::abs(s);
    return std::min(std::max(div, T(0)), T(1));
}

template <class T>
T pairwise_diversity(const std::vector<T>& wi, const std::vector<T>& wj) {
    if (wi.size() != wj.size() || wi.empty())
        throw ShapeError("pairwise diversity: vectors must be same nonzero length");
    return pairwise_diversity(wi.data(), wj.data(), wi.size());
}

// Sum of all pairwise diversities d_ij over the layer's remained filters
// (d_ii = 0, so the N x N matrix sum equals 2 * sum_{i<j}). Pairs with a
// near-zero-norm member are skipped and counted in *skipped.
template <class T>
TensorPtr<T> layer_diversity(Graph<T>& g, const TensorPtr<T>& weight,
                             const std::vector<std::uint8_t>& row_mask,
                             std::size_t* skipped = nullptr) {
    const std::size_t f = weight->dim(0);
    const std::size_t d = weight->numel() / f;
    if (row_mask.size() != f) throw ShapeError("layer diversity: row mask length mismatch");

    struct Pair {
        std::size_t i, j;
        T s;  // normalized cross-correlation
    };
    auto norms = std::make_shared<std::vector<T>>(f, T(0));
    auto pairs = std::make_shared<std::vector<Pair>>();
    const T* w = weight->data.data();
    for (std::size_t i = 0; i < f; ++i) {
        if (row_mask[i]) (*norms)[i] = std::sqrt(kern::dot(w + i * d, w + i * d, d));
    }
    T total = 0;
    for (std::size_t i = 0; i < f; ++i) {
        if (!row_mask[i]) continue;
        for (std::size_t j = i + 1; j < f; ++j) {
            if (!row_mask[j]) continue;
            if (!((*norms)[i] > T(kNormEps)) || !((*norms)[j] > T(kNormEps))) {
                if (skipped) ++*skipped;
                continue;
            }
            const T s = kern::dot(w + i * d, w + j * d, d) / ((*norms)[i] * (*norms)[j]);
            if (std::abs(s) >= T(1)) continue;  // collinear: div 0, subgradient 0
            total += T(2) * (T(1) - std::abs(s));
            pairs->push_back({i, j, s});
        }
    }
    auto out = make_tensor<T>({1}, std::vector<T>{total});
    out->requires_grad = weight->requires_grad;
    g.record("layer_diversity", {weight}, out, [weight, out, norms, pairs, d]() {
        if (!weight->requires_grad) return;
        weight->ensure_grad();
        const T gy = out->grad[0];
        const T* w = weight->data.data();
        T* gw = weight->grad.data();
        for (const auto& p : *pairs) {
            const T ni = (*norms)[p.i], nj = (*norms)[p.j];
            const T sgn = p.s > T(0) ? T(1) : (p.s < T(0) ? T(-1) : T(0));
            const T c = T(-2) * gy * sgn;
            // d s / d w_i = w_j/(ni*nj) - s*w_i/ni^2, symmetric in j
            kern::axpy(c / (ni * nj), w + p.j * d, gw + p.i * d, d);
            kern::axpy(-c * p.s / (ni * ni), w + p.i * d, gw + p.i * d, d);
            kern::axpy(c / (ni * nj), w + p.i * d, gw + p.j * d, d);
            kern::axpy(-c * p.s / (nj * nj), w + p.j * d, gw + p.j * d, d);
        }
    });
    return out;
}

// Total diversity over all prunable layers (remained filters only).
template <class T>
TensorPtr<T> diversity_term(Graph<T>& g, const ScalingState<T>& state,
                            std::size_t* skipped = nullptr) {
    TensorPtr<T> total;
    for (const auto& h : state.hosts()) {
        auto term = layer_diversity(g, state.model().layers[h.owner].weight,
                                    state.mask_slice(h), skipped);
        total = total ? ops::add(g, total, term) : term;
    }
    if (!total) total = make_tensor<T>({1}, T(0));
    return total;
}

// Mean pairwise diversity across all surviving filter pairs of every prunable
// layer (plain diagnostic, no gradients). Near-zero-norm pairs are skipped.
template <class T>
double mean_pairwise_diversity(Model<T>& model) {
    auto state = ScalingState<T>::gather(model);
    double total = 0;
    std::size_t count = 0;
    for (const auto& h : state.hosts()) {
        const auto& wt = model.layers[h.owner].weight;
        const std::size_t d = wt->numel() / h.count;
        const T* w = wt->data.data();
        for (std::size_t i = 0; i < h.count; ++i) {
            if (!state.mask_at(h.offset + i)) continue;
            for (std::size_t j = i + 1; j < h.count; ++j) {
                if (!state.mask_at(h.offset + j)) continue;
                try {
                    total += static_cast<double>(pairwise_diversity(w + i * d, w + j * d, d));
                    ++count;
                } catch (const UndefinedDiversityError&) {
                    // masked-out or decayed filters may reach zero norm; skip
                }
            }
        }
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

// ---------------------------------------------------------------------------
// the integrated objective
// ---------------------------------------------------------------------------

// Raw component values; the weighted contributions are lambda1*sparsity,
// -lambda2*gamma_R and -lambda3*diversity.
struct LossBreakdown {
    double task = 0;
    double sparsity = 0;
    double gamma_R = 0;
    double gamma_P = 0;
    double diversity = 0;
    double total = 0;
    std::size_t diversity_pairs_skipped = 0;
};

template <class T>
struct TotalLoss {
    TensorPtr<T> loss;
    LossBreakdown breakdown;
};

// Runs the model forward on `input` and assembles the full objective. Masks
// must already be applied (pruned channels silent). For classification,
// `labels` is used; for reconstruction the target is `targets`, or `input`
// itself when targets is null.
template <class T>
TotalLoss<T> total_loss(Graph<T>& g, Model<T>& model, const TensorPtr<T>& input,
                        const std::vector<int>& labels,
                        const std::type_identity_t<TensorPtr<T>>& targets,
                        ScalingState<T>& state, const ObjectiveConfig& cfg,
                        Mode mode = Mode::train) {
    TotalLoss<T> out;
    auto pred = forward(model, g, input, mode);
    TensorPtr<T> loss;
    if (cfg.task == TaskKind::classification) {
        loss = ops::softmax_cross_entropy(g, pred, labels);
    } else {
        loss = ops::mse(g, pred, targets ? targets : input);
    }
    out.breakdown.task = static_cast<double>(loss->data[0]);

    auto sparsity = sparsity_term(g, state);
    out.breakdown.sparsity = static_cast<double>(sparsity->data[0]);
    if (cfg.lambda1 != 0.0)
        loss = ops::add(g, loss, ops::scale(g, sparsity, static_cast<T>(cfg.lambda1)));

    if (cfg.lambda2 != 0.0) {
        auto ratio = pruning_ratio_terms(g, state);
        out.breakdown.gamma_R = static_cast<double>(ratio.gamma_R->data[0]);
        out.breakdown.gamma_P = static_cast<double>(ratio.gamma_P);
        loss = ops::add(g, loss, ops::scale(g, ratio.gamma_R, static_cast<T>(-cfg.lambda2)));
    } else {
        const auto [r, p] = pruning_ratio_values(state);
        out.breakdown.gamma_R = r;
        out.breakdown.gamma_P = p;
    }

    std::size_t skipped = 0;
    if (cfg.lambda3 != 0.0) {
        auto div = diversity_term(g, state, &skipped);
        out.breakdown.diversity = static_cast<double>(div->data[0]);
        loss = ops::add(g, loss, ops::scale(g, div, static_cast<T>(-cfg.lambda3)));
    } else {
        // value-only evaluation for the diagnostics row
        Graph<T> scratch;
        scratch.set_recording(false);
        auto div = diversity_term(scratch, state, &skipped);
        out.breakdown.diversity = static_cast<double>(div->data[0]);
    }
    out.breakdown.diversity_pairs_skipped = skipped;

    out.breakdown.total = static_cast<double>(loss->data[0]);
    out.loss = loss;
    return out;
}

}  // namespace objective
}  // namespace taper
