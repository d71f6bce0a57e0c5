#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "taper/layers.hpp"

namespace taper::metrics {

// Parameter and FLOP accounting. One multiply-accumulate counts as 2 FLOPs;
// the per-layer formula sheet is docs/flops.md.
struct LayerStats {
    std::size_t layer = 0;
    std::string kind;
    std::size_t params = 0;
    std::size_t flops = 0;  // per input sample
};

struct ModelStats {
    std::vector<LayerStats> per_layer;
    std::size_t params_total = 0;
    std::size_t flops_total = 0;
};

inline ModelStats model_stats(const NetworkSpec& spec) {
    const auto shapes = infer_shapes(spec);
    ModelStats stats;
    Shape cur = spec.input_shape;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerConfig& lc = spec.layers[i];
        LayerStats ls;
        ls.layer = i;
        ls.kind = layer_kind_name(lc.kind);
        const Shape& out = shapes[i];
        switch (lc.kind) {
            case LayerKind::dense: {
                const std::size_t in = cur[0];
                ls.params = lc.out_filters * in + (lc.bias ? lc.out_filters : 0);
                ls.flops = 2 * lc.out_filters * in + (lc.bias ? lc.out_filters : 0);
                break;
            }
            case LayerKind::conv2d: {
                const std::size_t c = cur[0];
                const std::size_t ohw = out[1] * out[2];
                ls.params = lc.out_filters * c * lc.kh * lc.kw +
                            (lc.bias ? lc.out_filters : 0);
                ls.flops = 2 * lc.out_filters * c * lc.kh * lc.kw * ohw +
                           (lc.bias ? lc.out_filters * ohw : 0);
                break;
            }
            case LayerKind::batchnorm:
                // gamma and beta; running statistics are not parameters
                ls.params = 2 * cur[0];
                ls.flops = 2 * shape_numel(cur);  // folded scale + shift
                break;
            case LayerKind::scaling:
                ls.params = cur[0];
                ls.flops = shape_numel(cur);
                break;
            case LayerKind::relu:
                ls.flops = shape_numel(cur);
                break;
            case LayerKind::maxpool:
                ls.flops = (lc.kh * lc.kh - 1) * shape_numel(out);
                break;
            case LayerKind::flatten:
                break;
        }
        stats.per_layer.push_back(ls);
        stats.params_total += ls.params;
        stats.flops_total += ls.flops;
        cur = out;
    }
    return stats;
}

inline std::size_t count_params(const NetworkSpec& spec) { return model_stats(spec).params_total; }
inline std::size_t count_flops(const NetworkSpec& spec) { return model_stats(spec).flops_total; }

template <class T>
ModelStats model_stats(const Model<T>& model) {
    return model_stats(model.spec);
}

}  // namespace taper::metrics
