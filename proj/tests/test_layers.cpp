#include <doctest.h>

#include <cmath>
#include <cstring>

#include "taper/layers.hpp"
#include "taper/objective.hpp"

using namespace taper;

namespace {

TensorPtr<double> randn(Shape shape, Rng& rng, bool requires_grad = false) {
    auto t = make_tensor<double>(std::move(shape));
    for (auto& v : t->data) v = rng.normal();
    t->requires_grad = requires_grad;
    return t;
}

NetworkSpec small_conv_spec(LayerKind host = LayerKind::batchnorm) {
    NetworkSpec spec;
    spec.input_shape = {2, 6, 6};
    spec.layers = {
        LayerConfig::conv_(4, 3, 1, 1),
        host == LayerKind::batchnorm ? LayerConfig::batchnorm_() : LayerConfig::scaling_(),
        LayerConfig::relu_(),
        LayerConfig::maxpool_(2),
        LayerConfig::flatten_(),
        LayerConfig::dense_(3),
    };
    return spec;
}

}  // namespace

TEST_CASE("batchnorm forward examples") {
    Graph<double> g;
    SUBCASE("hand-computed single filter") {
        // input [1,2,3,4], eps 1e-5, gamma 2, beta 1
        auto x = make_tensor<double>({4, 1}, std::vector<double>{1, 2, 3, 4});
        auto gamma = make_tensor<double>({1}, 2.0);
        auto beta = make_tensor<double>({1}, 1.0);
        std::vector<double> rm{0}, rv{1};
        auto y = ops::batchnorm(g, x, gamma, beta, rm, rv, 1e-5, 0.1, true);
        const double inv = 1.0 / std::sqrt(1.25 + 1e-5);
        for (int i = 0; i < 4; ++i) {
            const double zhat = (x->data[i] - 2.5) * inv;
            CHECK(y->data[i] == doctest::Approx(2 * zhat + 1).epsilon(1e-14));
        }
        // running stats moved toward batch stats
        CHECK(rm[0] == doctest::Approx(0.25));
        CHECK(rv[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.25));
    }
    SUBCASE("gamma=1 beta=0 on standardized input is near-identity") {
        Rng rng(3);
        auto x = randn({8, 2, 4, 4}, rng);
        // standardize each filter manually
        for (std::size_t f = 0; f < 2; ++f) {
            double mean = 0, var = 0;
            for (std::size_t s = 0; s < 8; ++s)
                for (std::size_t i = 0; i < 16; ++i) mean += x->data[(s * 2 + f) * 16 + i];
            mean /= 128;
            for (std::size_t s = 0; s < 8; ++s)
                for (std::size_t i = 0; i < 16; ++i) {
                    auto& v = x->data[(s * 2 + f) * 16 + i];
                    v -= mean;
                    var += v * v;
                }
            var /= 128;
            for (std::size_t s = 0; s < 8; ++s)
                for (std::size_t i = 0; i < 16; ++i) x->data[(s * 2 + f) * 16 + i] /= std::sqrt(var);
        }
        auto gamma = make_tensor<double>({2}, 1.0);
        auto beta = make_tensor<double>({2}, 0.0);
        std::vector<double> rm(2, 0), rv(2, 1);
        auto y = ops::batchnorm(g, x, gamma, beta, rm, rv, 1e-5, 0.1, true);
        for (std::size_t i = 0; i < x->numel(); ++i)
            CHECK(y->data[i] == doctest::Approx(x->data[i]).epsilon(1e-4));
    }
    SUBCASE("gamma=0 silences the channel to beta") {
        Rng rng(5);
        auto x = randn({3, 2, 3, 3}, rng);
        auto gamma = make_tensor<double>({2}, std::vector<double>{0.0, 1.3});
        auto beta = make_tensor<double>({2}, std::vector<double>{0.7, -0.1});
        std::vector<double> rm(2, 0), rv(2, 1);
        auto y = ops::batchnorm(g, x, gamma, beta, rm, rv, 1e-5, 0.1, true);
        for (std::size_t s = 0; s < 3; ++s)
            for (std::size_t i = 0; i < 9; ++i) CHECK(y->data[(s * 2 + 0) * 9 + i] == 0.7);
    }
    SUBCASE("degenerate batch") {
        auto x = make_tensor<double>({1, 2}, std::vector<double>{1, 2});
        auto gamma = make_tensor<double>({2}, 1.0);
        auto beta = make_tensor<double>({2}, 0.0);
        std::vector<double> rm(2, 0), rv(2, 1);
        CHECK_THROWS_AS(ops::batchnorm(g, x, gamma, beta, rm, rv, 1e-5, 0.1, true),
                        DegenerateError);
        // eval mode is fine with a single element
        CHECK_NOTHROW(ops::batchnorm(g, x, gamma, beta, rm, rv, 1e-5, 0.1, false));
    }
}

TEST_CASE("batchnorm train-mode output statistics: mean ~ beta, var ~ gamma^2") {
    Rng rng(7);
    auto x = randn({16, 3, 5, 5}, rng);
    for (auto& v : x->data) v = 0.5 + 2.0 * v;
    auto gamma = make_tensor<double>({3}, std::vector<double>{0.5, 1.5, 2.0});
    auto beta = make_tensor<double>({3}, std::vector<double>{-1.0, 0.0, 0.3});
    std::vector<double> rm(3, 0), rv(3, 1);
    Graph<double> g;
    auto y = ops::batchnorm(g, x, gamma, beta, rm, rv, 1e-5, 0.1, true);
    const std::size_t m = 16 * 25;
    for (std::size_t f = 0; f < 3; ++f) {
        double mean = 0;
        for (std::size_t s = 0; s < 16; ++s)
            for (std::size_t i = 0; i < 25; ++i) mean += y->data[(s * 3 + f) * 25 + i];
        mean /= static_cast<double>(m);
        double var = 0;
        for (std::size_t s = 0; s < 16; ++s)
            for (std::size_t i = 0; i < 25; ++i) {
                const double d = y->data[(s * 3 + f) * 25 + i] - mean;
                var += d * d;
            }
        var /= static_cast<double>(m);
        CHECK(mean == doctest::Approx(beta->data[f]).epsilon(1e-6));
        // batch variance of x-hat is var/(var+eps), so output var carries the
        // eps correction
        double in_mean = 0, in_var = 0;
        for (std::size_t s = 0; s < 16; ++s)
            for (std::size_t i = 0; i < 25; ++i) in_mean += x->data[(s * 3 + f) * 25 + i];
        in_mean /= static_cast<double>(m);
        for (std::size_t s = 0; s < 16; ++s)
            for (std::size_t i = 0; i < 25; ++i) {
                const double d = x->data[(s * 3 + f) * 25 + i] - in_mean;
                in_var += d * d;
            }
        in_var /= static_cast<double>(m);
        const double expected =
            gamma->data[f] * gamma->data[f] * in_var / (in_var + 1e-5);
        CHECK(var == doctest::Approx(expected).epsilon(1e-6));
    }
}

TEST_CASE("scaling layer examples") {
    Graph<double> g;
    Rng rng(9);
    SUBCASE("all-ones gamma is the identity") {
        auto x = randn({2, 3, 2, 2}, rng);
        auto gamma = make_tensor<double>({3}, 1.0);
        auto y = ops::channel_scale(g, x, gamma);
        CHECK(std::memcmp(y->data.data(), x->data.data(), x->numel() * sizeof(double)) == 0);
    }
    SUBCASE("gamma [0,1] zeroes only the first channel") {
        auto x = randn({1, 2, 2, 2}, rng);
        auto gamma = make_tensor<double>({2}, std::vector<double>{0.0, 1.0});
        auto y = ops::channel_scale(g, x, gamma);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(y->data[i] == 0.0);
            CHECK(y->data[4 + i] == x->data[4 + i]);
        }
    }
    SUBCASE("hand example") {
        auto x = make_tensor<double>({1, 1, 1, 2}, std::vector<double>{1, 2});
        auto gamma = make_tensor<double>({1}, 2.0);
        CHECK(ops::channel_scale(g, x, gamma)->data == std::vector<double>{2, 4});
    }
    SUBCASE("length mismatch") {
        auto x = make_tensor<double>({1, 3, 2, 2});
        auto gamma = make_tensor<double>({2});
        CHECK_THROWS_AS(ops::channel_scale(g, x, gamma), ShapeError);
    }
}

TEST_CASE("build initializes gammas per host kind") {
    SUBCASE("dense net shape check") {
        NetworkSpec spec;
        spec.input_shape = {4};
        spec.layers = {LayerConfig::dense_(8), LayerConfig::batchnorm_(), LayerConfig::relu_(),
                       LayerConfig::dense_(3)};
        auto model = build<double>(spec, 1);
        Graph<double> g;
        g.set_recording(false);
        auto x = make_tensor<double>({5, 4}, 0.3);
        auto y = forward(model, g, x, Mode::eval);
        CHECK(y->shape == Shape{5, 3});
    }
    SUBCASE("batchnorm-hosted gammas start at 0.5") {
        auto model = build<double>(small_conv_spec(LayerKind::batchnorm), 2);
        for (double v : model.layers[1].gamma->data) CHECK(v == 0.5);
    }
    SUBCASE("standalone scaling gammas start at 1.0") {
        auto model = build<double>(small_conv_spec(LayerKind::scaling), 2);
        for (double v : model.layers[1].gamma->data) CHECK(v == 1.0);
    }
    SUBCASE("gamma_init override wins") {
        auto spec = small_conv_spec(LayerKind::batchnorm);
        spec.layers[1].gamma_init = 0.25;
        auto model = build<double>(spec, 2);
        for (double v : model.layers[1].gamma->data) CHECK(v == 0.25);
    }
    SUBCASE("gamma count equals prunable filter count") {
        auto spec = small_conv_spec();
        CHECK(total_prunable_filters(spec) == 4);
        auto model = build<double>(spec, 3);
        CHECK(model.mask.size() == 4);
        std::size_t gammas = 0;
        for (const auto& h : host_map(spec)) gammas += model.layers[h.host].gamma->numel();
        CHECK(gammas == 4);
    }
}

TEST_CASE("spec validation") {
    SUBCASE("body conv without host") {
        NetworkSpec spec;
        spec.input_shape = {1, 6, 6};
        spec.layers = {LayerConfig::conv_(2, 3), LayerConfig::relu_(), LayerConfig::flatten_(),
                       LayerConfig::dense_(3)};
        CHECK_THROWS_AS(validate(spec), SpecError);
    }
    SUBCASE("prunable output head") {
        NetworkSpec spec;
        spec.input_shape = {4};
        spec.layers = {LayerConfig::dense_(8), LayerConfig::batchnorm_(), LayerConfig::relu_(),
                       LayerConfig::dense_(3), LayerConfig::batchnorm_()};
        CHECK_THROWS_AS(validate(spec), SpecError);
    }
    SUBCASE("shape inference failure") {
        NetworkSpec spec;
        spec.input_shape = {1, 4, 4};
        spec.layers = {LayerConfig::conv_(2, 7), LayerConfig::batchnorm_(),
                       LayerConfig::flatten_(), LayerConfig::dense_(3)};
        CHECK_THROWS_AS(validate(spec), SpecError);
    }
    SUBCASE("dense without flatten") {
        NetworkSpec spec;
        spec.input_shape = {1, 4, 4};
        spec.layers = {LayerConfig::dense_(3)};
        CHECK_THROWS_AS(infer_shapes(spec), SpecError);
    }
    SUBCASE("host without owner") {
        NetworkSpec spec;
        spec.input_shape = {1, 4, 4};
        spec.layers = {LayerConfig::batchnorm_(), LayerConfig::flatten_(),
                       LayerConfig::dense_(3)};
        CHECK_THROWS_AS(infer_shapes(spec), SpecError);
    }
}

TEST_CASE("silenced filter: zero channel and zero weight gradients") {
    for (LayerKind host : {LayerKind::scaling, LayerKind::batchnorm}) {
        auto spec = small_conv_spec(host);
        auto model = build<double>(spec, 11);
        Rng rng(13);
        // make gammas/weights nontrivial
        for (auto& v : model.layers[0].weight->data) v = rng.normal();

        auto state = ScalingState<double>::gather(model);
        state.silence(1);  // gamma_1 := 0 (and beta_1 for batchnorm)
        state.set_mask(1, 0);

        auto x = randn({3, 2, 6, 6}, rng);
        Graph<double> g;
        auto y = forward(model, g, x, Mode::train);
        auto after_host_out = g.node(1).output;  // conv is node 0, host node 1
        const std::size_t spatial = 6 * 6;
        for (std::size_t s = 0; s < 3; ++s)
            for (std::size_t i = 0; i < spatial; ++i)
                CHECK(after_host_out->data[(s * 4 + 1) * spatial + i] == 0.0);

        // downstream loss cannot depend on filter 1's weights
        model.zero_grad();
        auto loss = ops::sum(g, ops::mul(g, y, y));
        g.backward(loss);
        const auto& w = *model.layers[0].weight;
        const std::size_t wstride = w.numel() / 4;
        for (std::size_t i = 0; i < wstride; ++i) CHECK(w.grad[wstride * 1 + i] == 0.0);
        // but gamma_1 itself still receives gradient through the silent
        // channel, which is what permits revival
        CHECK(model.layers[1].gamma->has_grad());
    }
}
