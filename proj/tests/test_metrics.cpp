#include <doctest.h>

#include "taper/metrics.hpp"
#include "taper/pruner.hpp"

using namespace taper;

TEST_CASE("parameter counting") {
    SUBCASE("dense 4->3 with bias") {
        NetworkSpec spec;
        spec.input_shape = {4};
        spec.layers = {LayerConfig::dense_(8), LayerConfig::scaling_(), LayerConfig::relu_(),
                       LayerConfig::dense_(3, true)};
        auto stats = metrics::model_stats(spec);
        CHECK(stats.per_layer[3].params == 3 * 8 + 3);
        // and the dense head example value on a 4-feature input
        NetworkSpec head;
        head.input_shape = {4};
        head.layers = {LayerConfig::dense_(4), LayerConfig::scaling_(), LayerConfig::relu_(),
                       LayerConfig::dense_(3, true)};
        CHECK(metrics::model_stats(head).per_layer[3].params == 15);
    }
    SUBCASE("conv 2->4 3x3 without bias is 72") {
        NetworkSpec spec;
        spec.input_shape = {2, 6, 6};
        spec.layers = {LayerConfig::conv_(4, 3, 1, 1), LayerConfig::batchnorm_(),
                       LayerConfig::relu_(), LayerConfig::flatten_(), LayerConfig::dense_(2)};
        auto stats = metrics::model_stats(spec);
        CHECK(stats.per_layer[0].params == 72);
        CHECK(stats.per_layer[1].params == 8);  // gamma + beta
    }
    SUBCASE("totals equal per-layer sums") {
        NetworkSpec spec;
        spec.input_shape = {3, 8, 8};
        spec.layers = {LayerConfig::conv_(5, 3, 1, 1), LayerConfig::scaling_(),
                       LayerConfig::relu_(),           LayerConfig::maxpool_(2),
                       LayerConfig::flatten_(),        LayerConfig::dense_(4, true)};
        auto stats = metrics::model_stats(spec);
        std::size_t p = 0, f = 0;
        for (const auto& ls : stats.per_layer) {
            p += ls.params;
            f += ls.flops;
        }
        CHECK(stats.params_total == p);
        CHECK(stats.flops_total == f);
    }
}

TEST_CASE("flop counting") {
    SUBCASE("dense 4->3 is 24 without bias") {
        NetworkSpec spec;
        spec.input_shape = {4};
        spec.layers = {LayerConfig::dense_(6, false), LayerConfig::scaling_(),
                       LayerConfig::relu_(), LayerConfig::dense_(3, false)};
        auto stats = metrics::model_stats(spec);
        CHECK(stats.per_layer[3].flops == 2 * 3 * 6);
        NetworkSpec direct;
        direct.input_shape = {4};
        direct.layers = {LayerConfig::dense_(4, false), LayerConfig::scaling_(),
                         LayerConfig::relu_(), LayerConfig::dense_(3, false)};
        CHECK(metrics::model_stats(direct).per_layer[3].flops == 24);
    }
    SUBCASE("conv 1->1 3x3 on 5x5 pad 0 is 162") {
        NetworkSpec spec;
        spec.input_shape = {1, 5, 5};
        spec.layers = {LayerConfig::conv_(1, 3), LayerConfig::scaling_(), LayerConfig::relu_(),
                       LayerConfig::flatten_(), LayerConfig::dense_(2)};
        auto stats = metrics::model_stats(spec);
        CHECK(stats.per_layer[0].flops == 162);
    }
    SUBCASE("halving filters halves conv flops") {
        auto flops_for = [](std::size_t f) {
            NetworkSpec spec;
            spec.input_shape = {3, 8, 8};
            spec.layers = {LayerConfig::conv_(f, 3, 1, 1), LayerConfig::scaling_(),
                           LayerConfig::relu_(), LayerConfig::flatten_(),
                           LayerConfig::dense_(2)};
            return metrics::model_stats(spec).per_layer[0].flops;
        };
        CHECK(flops_for(8) == 2 * flops_for(4));
    }
}

TEST_CASE("compacted model has fewer parameters than the masked one") {
    NetworkSpec spec;
    spec.input_shape = {2, 6, 6};
    spec.layers = {LayerConfig::conv_(6, 3, 1, 1), LayerConfig::batchnorm_(),
                   LayerConfig::relu_(), LayerConfig::flatten_(), LayerConfig::dense_(3)};
    auto model = build<double>(spec, 5);
    auto state = ScalingState<double>::gather(model);
    pruner::apply_mask(state, {0, 3});
    auto narrow = pruner::compact(model, pruner::plan_compaction(state));
    CHECK(metrics::model_stats(narrow.spec).params_total <
          metrics::model_stats(model.spec).params_total);
}
