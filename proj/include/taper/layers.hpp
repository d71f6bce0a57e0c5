#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "taper/autograd.hpp"
#include "taper/ops.hpp"
#include "taper/tensor.hpp"

namespace taper {

enum class LayerKind : std::uint32_t {
    dense = 0,
    conv2d = 1,
    batchnorm = 2,
    scaling = 3,
    relu = 4,
    maxpool = 5,
    flatten = 6,
};

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::scaling: return "scaling";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::flatten: return "flatten";
    }
    return "unknown";
}

enum class TaskKind : std::uint32_t {
    classification = 0,
    reconstruction = 1,
};

struct LayerConfig {
    LayerKind kind;
    std::size_t out_filters = 0;  // dense/conv
    std::size_t kh = 0;           // conv kernel height; maxpool window
    std::size_t kw = 0;
    std::size_t stride = 1;
    std::size_t pad = 0;
    bool bias = false;
    // gamma start value for batchnorm/scaling hosts; < 0 selects the default
    // (0.5 for batchnorm-hosted gammas, 1.0 for standalone scaling layers)
    double gamma_init = -1.0;
    double eps = 1e-5;
    double momentum = 0.1;

    static LayerConfig dense_(std::size_t out, bool bias = true) {
        LayerConfig c{LayerKind::dense};
        c.out_filters = out;
        c.bias = bias;
        return c;
    }
    static LayerConfig conv_(std::size_t f, std::size_t k, std::size_t stride = 1,
                             std::size_t pad = 0, bool bias = false) {
        LayerConfig c{LayerKind::conv2d};
        c.out_filters = f;
        c.kh = c.kw = k;
        c.stride = stride;
        c.pad = pad;
        c.bias = bias;
        return c;
    }
    static LayerConfig batchnorm_() { return LayerConfig{LayerKind::batchnorm}; }
    static LayerConfig scaling_() { return LayerConfig{LayerKind::scaling}; }
    static LayerConfig relu_() { return LayerConfig{LayerKind::relu}; }
    static LayerConfig maxpool_(std::size_t k, std::size_t stride = 0) {
        LayerConfig c{LayerKind::maxpool};
        c.kh = c.kw = k;
        c.stride = stride ? stride : k;
        return c;
    }
    static LayerConfig flatten_() { return LayerConfig{LayerKind::flatten}; }
};

// Ordered layer list plus the per-sample input shape. A conv/dense layer
// immediately followed by a batchnorm or scaling layer forms a prunable unit
// whose gamma vector lives in that host; the final parameterized layer is the
// output head and carries no host.
struct NetworkSpec {
    std::vector<LayerConfig> layers;
    Shape input_shape;  // {c, h, w} or {features}
    TaskKind task = TaskKind::classification;
};

inline bool is_parameterized(LayerKind k) {
    return k == LayerKind::dense || k == LayerKind::conv2d || k == LayerKind::batchnorm ||
           k == LayerKind::scaling;
}

inline bool is_host(LayerKind k) { return k == LayerKind::batchnorm || k == LayerKind::scaling; }

// Per-sample output shape of every layer. Throws SpecError when inference
// fails.
inline std::vector<Shape> infer_shapes(const NetworkSpec& spec) {
    if (spec.input_shape.empty()) throw SpecError("network spec: empty input shape");
    for (std::size_t d : spec.input_shape) {
        if (d == 0) throw SpecError("network spec: zero extent in input shape");
    }
    if (spec.layers.empty()) throw SpecError("network spec: no layers");
    std::vector<Shape> out;
    Shape cur = spec.input_shape;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerConfig& lc = spec.layers[i];
        const std::string where = "layer " + std::to_string(i) + " (" +
                                  layer_kind_name(lc.kind) + ")";
        switch (lc.kind) {
            case LayerKind::dense:
                if (cur.size() != 1)
                    throw SpecError(where + ": needs rank-1 input, got " + shape_str(cur) +
                                    " (flatten first)");
                if (lc.out_filters == 0) throw SpecError(where + ": out_filters must be positive");
                cur = {lc.out_filters};
                break;
            case LayerKind::conv2d: {
                if (cur.size() != 3)
                    throw SpecError(where + ": needs CHW input, got " + shape_str(cur));
                if (lc.out_filters == 0) throw SpecError(where + ": out_filters must be positive");
                if (lc.kh == 0 || lc.kw == 0 || lc.stride == 0)
                    throw SpecError(where + ": kernel and stride must be positive");
                const std::size_t h = cur[1], w = cur[2];
                if (h + 2 * lc.pad < lc.kh || w + 2 * lc.pad < lc.kw)
                    throw SpecError(where + ": kernel larger than padded input " + shape_str(cur));
                cur = {lc.out_filters, (h + 2 * lc.pad - lc.kh) / lc.stride + 1,
                       (w + 2 * lc.pad - lc.kw) / lc.stride + 1};
                break;
            }
            case LayerKind::batchnorm:
            case LayerKind::scaling:
                if (i == 0 || !(spec.layers[i - 1].kind == LayerKind::dense ||
                                spec.layers[i - 1].kind == LayerKind::conv2d))
                    throw SpecError(where + ": must directly follow a conv or dense layer");
                break;
            case LayerKind::relu:
                break;
            case LayerKind::maxpool: {
                if (cur.size() != 3)
                    throw SpecError(where + ": needs CHW input, got " + shape_str(cur));
                if (lc.kh == 0 || lc.stride == 0)
                    throw SpecError(where + ": window and stride must be positive");
                if (cur[1] < lc.kh || cur[2] < lc.kh)
                    throw SpecError(where + ": window larger than input " + shape_str(cur));
                cur = {cur[0], (cur[1] - lc.kh) / lc.stride + 1, (cur[2] - lc.kh) / lc.stride + 1};
                break;
            }
            case LayerKind::flatten:
                cur = {shape_numel(cur)};
                break;
        }
        out.push_back(cur);
    }
    return out;
}

// Prunable unit: a conv/dense layer and the host layer holding its gammas.
struct HostInfo {
    std::size_t owner;   // index of the conv/dense layer
    std::size_t host;    // index of the batchnorm/scaling layer
    std::size_t offset;  // offset into the flat gamma/mask indexing
    std::size_t count;   // filters in this unit
};

inline std::vector<HostInfo> host_map(const NetworkSpec& spec) {
    std::vector<HostInfo> hosts;
    std::size_t offset = 0;
    for (std::size_t i = 0; i + 1 < spec.layers.size(); ++i) {
        if ((spec.layers[i].kind == LayerKind::dense ||
             spec.layers[i].kind == LayerKind::conv2d) &&
            is_host(spec.layers[i + 1].kind)) {
            hosts.push_back(HostInfo{i, i + 1, offset, spec.layers[i].out_filters});
            offset += spec.layers[i].out_filters;
        }
    }
    return hosts;
}

inline std::size_t total_prunable_filters(const NetworkSpec& spec) {
    std::size_t n = 0;
    for (const auto& h : host_map(spec)) n += h.count;
    return n;
}

// Full structural validation beyond shape inference.
inline void validate(const NetworkSpec& spec) {
    infer_shapes(spec);
    const auto hosts = host_map(spec);
    if (hosts.empty()) throw SpecError("network spec: no prunable (scaling-hosted) layer");

    std::size_t last_param = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (spec.layers[i].kind == LayerKind::dense || spec.layers[i].kind == LayerKind::conv2d)
            last_param = i;
    }
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerConfig& lc = spec.layers[i];
        if (lc.kind != LayerKind::dense && lc.kind != LayerKind::conv2d) continue;
        const bool hosted = i + 1 < spec.layers.size() && is_host(spec.layers[i + 1].kind);
        if (!hosted && i != last_param)
            throw SpecError("layer " + std::to_string(i) + " (" + layer_kind_name(lc.kind) +
                            "): every body conv/dense needs a batchnorm or scaling host; only "
                            "the output head may omit one");
        if (hosted && i == last_param)
            throw SpecError("layer " + std::to_string(i) +
                            ": the output head must not be prunable (remove its host)");
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <class T>
struct LayerState {
    LayerKind kind;
    TensorPtr<T> weight;  // conv/dense
    TensorPtr<T> bias;    // optional
    TensorPtr<T> gamma;   // batchnorm/scaling
    TensorPtr<T> beta;    // batchnorm
    std::vector<T> running_mean;
    std::vector<T> running_var;
};

enum class ParamClass { weight, bias, gamma, beta };

template <class T>
struct ParamRef {
    TensorPtr<T> tensor;
    ParamClass cls;
    std::size_t layer;
};

template <class T>
struct Model {
    NetworkSpec spec;
    std::vector<LayerState<T>> layers;
    // 1 = remained, 0 = pruned; indexed by the flat order of host_map()
    std::vector<std::uint8_t> mask;

    std::vector<ParamRef<T>> parameters() const {
        std::vector<ParamRef<T>> ps;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            if (l.weight) ps.push_back({l.weight, ParamClass::weight, i});
            if (l.bias) ps.push_back({l.bias, ParamClass::bias, i});
            if (l.gamma) ps.push_back({l.gamma, ParamClass::gamma, i});
            if (l.beta) ps.push_back({l.beta, ParamClass::beta, i});
        }
        return ps;
    }

    void zero_grad() const {
        for (const auto& p : parameters()) p.tensor->zero_grad();
    }
};

enum class Mode { train, eval };

template <class T>
Model<T> build(const NetworkSpec& spec, std::uint64_t seed) {
    validate(spec);
    const auto shapes = infer_shapes(spec);
    Model<T> model;
    model.spec = spec;
    model.mask.assign(total_prunable_filters(spec), 1);
    Shape cur = spec.input_shape;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerConfig& lc = spec.layers[i];
        LayerState<T> st;
        st.kind = lc.kind;
        switch (lc.kind) {
            case LayerKind::dense: {
                const std::size_t in = cur[0];
                st.weight = std::make_shared<Tensor<T>>(
                    he_init<T>({lc.out_filters, in}, in, Rng::mix(seed, i)));
                st.weight->requires_grad = true;
                if (lc.bias) {
                    st.bias = make_tensor<T>({lc.out_filters}, T(0));
                    st.bias->requires_grad = true;
                }
                break;
            }
            case LayerKind::conv2d: {
                const std::size_t c = cur[0];
                const std::size_t fan_in = c * lc.kh * lc.kw;
                st.weight = std::make_shared<Tensor<T>>(
                    he_init<T>({lc.out_filters, c, lc.kh, lc.kw}, fan_in, Rng::mix(seed, i)));
                st.weight->requires_grad = true;
                if (lc.bias) {
                    st.bias = make_tensor<T>({lc.out_filters}, T(0));
                    st.bias->requires_grad = true;
                }
                break;
            }
            case LayerKind::batchnorm: {
                const std::size_t f = cur[0];
                const T g0 = lc.gamma_init < 0 ? T(0.5) : static_cast<T>(lc.gamma_init);
                st.gamma = make_tensor<T>({f}, g0);
                st.gamma->requires_grad = true;
                st.beta = make_tensor<T>({f}, T(0));
                st.beta->requires_grad = true;
                st.running_mean.assign(f, T(0));
                st.running_var.assign(f, T(1));
                break;
            }
            case LayerKind::scaling: {
                const std::size_t f = cur[0];
                const T g0 = lc.gamma_init < 0 ? T(1) : static_cast<T>(lc.gamma_init);
                st.gamma = make_tensor<T>({f}, g0);
                st.gamma->requires_grad = true;
                break;
            }
            case LayerKind::relu:
            case LayerKind::maxpool:
            case LayerKind::flatten:
                break;
        }
        model.layers.push_back(std::move(st));
        cur = shapes[i];
    }
    return model;
}

// Applies the layers in order. `x` is a batch [n, <per-sample shape>].
template <class T>
TensorPtr<T> forward(Model<T>& model, Graph<T>& g, const TensorPtr<T>& x, Mode mode) {
    TensorPtr<T> cur = x;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerConfig& lc = model.spec.layers[i];
        LayerState<T>& st = model.layers[i];
        switch (lc.kind) {
            case LayerKind::dense:
                cur = ops::linear(g, cur, st.weight, st.bias);
                break;
            case LayerKind::conv2d:
                cur = ops::conv2d(g, cur, st.weight, st.bias, lc.stride, lc.pad);
                break;
            case LayerKind::batchnorm:
                cur = ops::batchnorm(g, cur, st.gamma, st.beta, st.running_mean, st.running_var,
                                     static_cast<T>(lc.eps), static_cast<T>(lc.momentum),
                                     mode == Mode::train);
                break;
            case LayerKind::scaling:
                cur = ops::channel_scale(g, cur, st.gamma);
                break;
            case LayerKind::relu:
                cur = ops::relu(g, cur);
                break;
            case LayerKind::maxpool:
                cur = ops::maxpool2d(g, cur, lc.kh, lc.stride);
                break;
            case LayerKind::flatten:
                cur = ops::flatten(g, cur);
                break;
        }
    }
    return cur;
}

}  // namespace taper
