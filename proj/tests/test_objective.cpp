#include <doctest.h>

#include <cmath>

#include "taper/gradcheck.hpp"
#include "taper/objective.hpp"
#include "taper/pruner.hpp"

using namespace taper;

namespace {

// one conv unit with 3 filters + head; host gammas settable directly
struct Fixture {
    Model<double> model;
    Fixture(std::vector<double> gammas, std::vector<std::uint8_t> mask,
            LayerKind host = LayerKind::scaling) {
        NetworkSpec spec;
        spec.input_shape = {1, 4, 4};
        spec.layers = {
            LayerConfig::conv_(gammas.size(), 3, 1, 1),
            host == LayerKind::scaling ? LayerConfig::scaling_() : LayerConfig::batchnorm_(),
            LayerConfig::relu_(),
            LayerConfig::flatten_(),
            LayerConfig::dense_(2),
        };
        model = build<double>(spec, 5);
        auto& g = model.layers[1].gamma->data;
        for (std::size_t i = 0; i < gammas.size(); ++i) g[i] = gammas[i];
        model.mask = std::move(mask);
    }
    ScalingState<double> state() { return ScalingState<double>::gather(model); }
};

}  // namespace

TEST_CASE("sparsity term sums |gamma| over remained filters only") {
    SUBCASE("hand value") {
        Fixture f({0.5, -0.2, 0.3}, {1, 1, 0});
        Graph<double> g;
        auto s = f.state();
        CHECK(objective::sparsity_term(g, s)->data[0] == doctest::Approx(0.7).epsilon(1e-15));
    }
    SUBCASE("all masked gives zero") {
        Fixture f({0.5, -0.2, 0.3}, {0, 0, 0});
        Graph<double> g;
        auto s = f.state();
        CHECK(objective::sparsity_term(g, s)->data[0] == 0.0);
    }
    SUBCASE("homogeneity: doubling remained gammas doubles the term") {
        Fixture f({0.4, -0.1, 0.9}, {1, 0, 1});
        Graph<double> g;
        auto s = f.state();
        const double before = objective::sparsity_term(g, s)->data[0];
        for (auto& v : f.model.layers[1].gamma->data) v *= 2.0;
        const double after = objective::sparsity_term(g, s)->data[0];
        CHECK(after == doctest::Approx(2.0 * before).epsilon(1e-14));
    }
}

TEST_CASE("pruning ratio terms") {
    SUBCASE("nothing pruned") {
        Fixture f({0.5, 0.2, 0.3}, {1, 1, 1});
        Graph<double> g;
        auto s = f.state();
        auto r = objective::pruning_ratio_terms(g, s);
        CHECK(r.gamma_R->data[0] == 1.0);
        CHECK(r.gamma_P == 0.0);
    }
    SUBCASE("hand value with gamma_R + gamma_P = 1 exactly") {
        Fixture f({0.1, 0.2, 0.3, 0.4}, {0, 0, 1, 1});
        Graph<double> g;
        auto s = f.state();
        auto r = objective::pruning_ratio_terms(g, s);
        CHECK(r.gamma_P == doctest::Approx(0.3).epsilon(1e-14));
        CHECK(r.gamma_R->data[0] + r.gamma_P == 1.0);
    }
    SUBCASE("zero denominator is a degenerate state") {
        Fixture f({0.0, 0.0, 0.0}, {1, 1, 1});
        Graph<double> g;
        auto s = f.state();
        CHECK_THROWS_AS(objective::pruning_ratio_terms(g, s), DegenerateError);
    }
    SUBCASE("gradient pushes remained gammas up when maximizing gamma_R") {
        // one gradient step on -gamma_R alone must strictly increase gamma_R
        Fixture f({0.1, 0.2, 0.3, 0.4}, {0, 0, 1, 1});
        auto s = f.state();
        Graph<double> g;
        auto r = objective::pruning_ratio_terms(g, s);
        const double before = r.gamma_R->data[0];
        REQUIRE(before > 0.0);
        REQUIRE(before < 1.0);
        auto neg = ops::scale(g, r.gamma_R, -1.0);
        f.model.zero_grad();
        g.backward(neg);
        auto& gamma = *f.model.layers[1].gamma;
        for (std::size_t i = 0; i < gamma.numel(); ++i) gamma.data[i] -= 0.05 * gamma.grad[i];
        Graph<double> g2;
        auto r2 = objective::pruning_ratio_terms(g2, s);
        CHECK(r2.gamma_R->data[0] > before);
    }
}

TEST_CASE("pairwise diversity") {
    SUBCASE("self-correlation gives 0") {
        std::vector<double> w = {0.3, -1.2, 0.5};
        CHECK(objective::pairwise_diversity(w, w) == 0.0);
    }
    SUBCASE("orthogonal vectors give 1") {
        CHECK(objective::pairwise_diversity<double>({1, 0}, {0, 1}) == 1.0);
    }
    SUBCASE("hand value 1 - 1/sqrt 2") {
        CHECK(objective::pairwise_diversity<double>({1, 1}, {1, 0}) ==
              doctest::Approx(1.0 - 1.0 / std::sqrt(2.0)).epsilon(1e-12));
    }
    SUBCASE("near-zero norm is undefined") {
        CHECK_THROWS_AS(objective::pairwise_diversity<double>({0, 0}, {1, 0}),
                        UndefinedDiversityError);
    }
    SUBCASE("bounded in [0,1] and symmetric on random vectors") {
        Rng rng(31);
        for (int t = 0; t < 200; ++t) {
            const std::size_t d = 1 + rng.uniform_int(16);
            std::vector<double> a(d), b(d);
            for (auto& v : a) v = rng.normal();
            for (auto& v : b) v = rng.normal();
            const double dij = objective::pairwise_diversity(a, b);
            const double dji = objective::pairwise_diversity(b, a);
            CHECK(dij >= 0.0);
            CHECK(dij <= 1.0);
            CHECK(dij == dji);
        }
    }
}

TEST_CASE("layer diversity") {
    Graph<double> g;
    SUBCASE("single filter gives 0") {
        auto w = make_tensor<double>({1, 4}, std::vector<double>{1, 2, 3, 4});
        CHECK(objective::layer_diversity(g, w, {1})->data[0] == 0.0);
    }
    SUBCASE("two orthogonal filters give 2") {
        auto w = make_tensor<double>({2, 2}, std::vector<double>{1, 0, 0, 1});
        CHECK(objective::layer_diversity(g, w, {1, 1})->data[0] == 2.0);
    }
    SUBCASE("three mutually orthogonal filters give 6") {
        auto w = make_tensor<double>({3, 3},
                                     std::vector<double>{2, 0, 0, 0, -1, 0, 0, 0, 0.5});
        CHECK(objective::layer_diversity(g, w, {1, 1, 1})->data[0] == 6.0);
    }
    SUBCASE("masked rows are excluded") {
        auto w = make_tensor<double>({3, 2}, std::vector<double>{1, 0, 0, 1, 1, 1});
        CHECK(objective::layer_diversity(g, w, {1, 1, 0})->data[0] == 2.0);
    }
    SUBCASE("zero-norm rows are skipped with a warning count") {
        auto w = make_tensor<double>({3, 2}, std::vector<double>{1, 0, 0, 0, 0, 1});
        std::size_t skipped = 0;
        CHECK(objective::layer_diversity(g, w, {1, 1, 1}, &skipped)->data[0] == 2.0);
        CHECK(skipped == 2);  // pairs (0,1) and (1,2)
    }
    SUBCASE("invariant under positive rescaling of one filter") {
        Rng rng(37);
        auto w = make_tensor<double>({4, 6});
        for (auto& v : w->data) v = rng.normal();
        const double before = objective::layer_diversity(g, w, {1, 1, 1, 1})->data[0];
        for (std::size_t j = 0; j < 6; ++j) w->data[2 * 6 + j] *= 7.5;
        const double after = objective::layer_diversity(g, w, {1, 1, 1, 1})->data[0];
        CHECK(std::abs(after - before) < 1e-10);
    }
    SUBCASE("gradient matches finite differences") {
        Rng rng(41);
        auto w = make_tensor<double>({4, 5});
        for (auto& v : w->data) v = rng.normal();
        w->requires_grad = true;
        const std::vector<std::uint8_t> mask = {1, 1, 0, 1};
        Graph<double> gg;
        auto out = objective::layer_diversity(gg, w, mask);
        gg.backward(out);
        auto eval = [&]() {
            Graph<double> eg;
            eg.set_recording(false);
            return objective::layer_diversity(eg, w, mask)->data[0];
        };
        const auto fd = gradcheck::finite_diff(*w, eval);
        for (std::size_t i = 0; i < w->numel(); ++i) {
            CHECK(gradcheck::rel_err(w->grad[i], fd[i]) < 1e-6);
        }
    }
}

TEST_CASE("total loss composition") {
    Rng rng(43);
    Fixture f({0.5, -0.2, 0.3}, {1, 1, 0});
    auto s = f.state();
    auto input = make_tensor<double>({2, 1, 4, 4});
    for (auto& v : input->data) v = rng.normal();
    const std::vector<int> labels = {0, 1};

    SUBCASE("all lambdas zero reduces to the task loss") {
        ObjectiveConfig cfg{0.0, 0.0, 0.0, TaskKind::classification};
        Graph<double> g;
        auto tl = objective::total_loss(g, f.model, input, labels, nullptr, s, cfg);
        CHECK(tl.breakdown.total == tl.breakdown.task);
        Graph<double> g2;
        auto ce = ops::softmax_cross_entropy(g2, forward(f.model, g2, input, Mode::train),
                                             labels);
        CHECK(tl.breakdown.task == doctest::Approx(ce->data[0]).epsilon(1e-12));
    }
    SUBCASE("lambda1-only matches the sparsity hand value") {
        ObjectiveConfig cfg{1e-4, 0.0, 0.0, TaskKind::classification};
        Graph<double> g;
        auto tl = objective::total_loss(g, f.model, input, labels, nullptr, s, cfg);
        CHECK(tl.breakdown.sparsity == doctest::Approx(0.7).epsilon(1e-14));
        CHECK(tl.breakdown.total ==
              doctest::Approx(tl.breakdown.task + 1e-4 * 0.7).epsilon(1e-12));
    }
    SUBCASE("breakdown accounting identity on random configurations") {
        Rng trng(47);
        for (int t = 0; t < 100; ++t) {
            const double l1 = trng.uniform() < 0.3 ? 0.0 : trng.uniform() * 0.1;
            const double l2 = trng.uniform() < 0.3 ? 0.0 : trng.uniform() * 0.1;
            const double l3 = trng.uniform() < 0.3 ? 0.0 : trng.uniform() * 0.01;
            ObjectiveConfig cfg{l1, l2, l3, TaskKind::classification};
            for (auto& v : f.model.layers[1].gamma->data) v = 0.1 + trng.uniform();
            for (auto& v : input->data) v = trng.normal();
            Graph<double> g;
            auto tl = objective::total_loss(g, f.model, input, labels, nullptr, s, cfg);
            const auto& b = tl.breakdown;
            const double recomposed =
                b.task + l1 * b.sparsity - l2 * b.gamma_R - l3 * b.diversity;
            CHECK(std::abs(recomposed - b.total) <=
                  1e-12 * std::max(1.0, std::abs(b.total)));
            CHECK(b.gamma_R + b.gamma_P == 1.0);
        }
    }
    SUBCASE("reconstruction task uses mse against the input") {
        NetworkSpec spec;
        spec.input_shape = {1, 4, 4};
        spec.layers = {LayerConfig::conv_(3, 3, 1, 1), LayerConfig::scaling_(),
                       LayerConfig::relu_(), LayerConfig::conv_(1, 3, 1, 1)};
        auto model = build<double>(spec, 7);
        auto st = ScalingState<double>::gather(model);
        ObjectiveConfig cfg{1e-4, 1e-4, 1e-6, TaskKind::reconstruction};
        Graph<double> g;
        auto tl = objective::total_loss(g, model, input, {}, nullptr, st, cfg);
        CHECK(std::isfinite(tl.breakdown.total));
        CHECK(tl.breakdown.task >= 0.0);
    }
}

TEST_CASE("full-objective gradients match finite differences (sampled)") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL, 6ULL, 7ULL, 8ULL}) {
        const auto res = gradcheck::check_random_config<double>(seed, 1e-4);
        INFO("seed ", seed, " worst ", res.max_rel_err, " at ", res.worst);
        CHECK(res.ok);
    }
}
