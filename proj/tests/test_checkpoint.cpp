#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "taper/checkpoint.hpp"
#include "taper/layers.hpp"

using namespace taper;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        const auto tick = std::chrono::steady_clock::now().time_since_epoch().count();
        path = std::filesystem::temp_directory_path() /
               ("taper_test_" + std::to_string(tick) + "_" + std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

Model<double> sample_model(std::uint64_t seed) {
    NetworkSpec spec;
    spec.input_shape = {2, 8, 8};
    spec.layers = {
        LayerConfig::conv_(4, 3, 1, 1), LayerConfig::batchnorm_(), LayerConfig::relu_(),
        LayerConfig::conv_(3, 3, 1, 1), LayerConfig::scaling_(),   LayerConfig::relu_(),
        LayerConfig::maxpool_(2),       LayerConfig::flatten_(),   LayerConfig::dense_(5, true),
    };
    auto model = build<double>(spec, seed);
    // perturb running stats and mask so the round trip covers them
    auto& bn = model.layers[1];
    Rng rng(seed + 1);
    for (auto& v : bn.running_mean) v = rng.normal();
    for (auto& v : bn.running_var) v = 0.5 + rng.uniform();
    model.mask[2] = 0;
    model.layers[1].gamma->data[2] = 0.0;
    model.layers[1].beta->data[2] = 0.0;
    return model;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-exact") {
    TempDir tmp;
    auto model = sample_model(77);
    const std::string path = tmp.file("model.tpr");
    checkpoint::save(model, path);
    auto loaded = checkpoint::load<double>(path);

    CHECK(loaded.spec.layers.size() == model.spec.layers.size());
    CHECK(loaded.mask == model.mask);
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& a = model.layers[i];
        const auto& b = loaded.layers[i];
        auto same = [](const TensorPtr<double>& x, const TensorPtr<double>& y) {
            if (!x || !y) return !x && !y;
            return x->shape == y->shape &&
                   std::memcmp(x->data.data(), y->data.data(), x->numel() * sizeof(double)) == 0;
        };
        CHECK(same(a.weight, b.weight));
        CHECK(same(a.bias, b.bias));
        CHECK(same(a.gamma, b.gamma));
        CHECK(same(a.beta, b.beta));
        CHECK(a.running_mean == b.running_mean);
        CHECK(a.running_var == b.running_var);
    }

    // forward outputs bitwise-identical on a fixed input
    Rng rng(5);
    auto x = make_tensor<double>({2, 2, 8, 8});
    for (auto& v : x->data) v = rng.normal();
    Graph<double> g;
    g.set_recording(false);
    auto y1 = forward(model, g, x, Mode::eval);
    auto y2 = forward(loaded, g, x, Mode::eval);
    CHECK(std::memcmp(y1->data.data(), y2->data.data(), y1->numel() * sizeof(double)) == 0);
}

TEST_CASE("checkpoint rejects malformed files") {
    TempDir tmp;
    auto model = sample_model(78);
    const std::string path = tmp.file("model.tpr");
    checkpoint::save(model, path);

    SUBCASE("corrupted magic") {
        auto bytes = [&] {
            std::ifstream in(path, std::ios::binary);
            return std::string((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
        }();
        bytes[0] = 'X';
        const std::string bad = tmp.file("bad_magic.tpr");
        std::ofstream(bad, std::ios::binary) << bytes;
        CHECK_THROWS_AS(checkpoint::load<double>(bad), FormatError);
    }
    SUBCASE("unsupported version") {
        auto bytes = [&] {
            std::ifstream in(path, std::ios::binary);
            return std::string((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
        }();
        bytes[8] = 99;  // version field
        const std::string bad = tmp.file("bad_version.tpr");
        std::ofstream(bad, std::ios::binary) << bytes;
        CHECK_THROWS_AS(checkpoint::load<double>(bad), FormatError);
    }
    SUBCASE("truncated file reports an offset") {
        auto bytes = [&] {
            std::ifstream in(path, std::ios::binary);
            return std::string((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
        }();
        bytes.resize(bytes.size() / 2);
        const std::string bad = tmp.file("truncated.tpr");
        std::ofstream(bad, std::ios::binary) << bytes;
        try {
            checkpoint::load<double>(bad);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset != FormatError::npos);
            CHECK(std::string(e.what()).find("offset") != std::string::npos);
        }
    }
    SUBCASE("precision mismatch") {
        CHECK_THROWS_AS(checkpoint::load<float>(path), FormatError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(checkpoint::load<double>(tmp.file("nope.tpr")), FormatError);
    }
}

TEST_CASE("float-precision checkpoint round trip") {
    TempDir tmp;
    NetworkSpec spec;
    spec.input_shape = {4};
    spec.layers = {LayerConfig::dense_(6), LayerConfig::scaling_(), LayerConfig::relu_(),
                   LayerConfig::dense_(2, true)};
    auto model = build<float>(spec, 3);
    const std::string path = tmp.file("model32.tpr");
    checkpoint::save(model, path);
    auto loaded = checkpoint::load<float>(path);
    CHECK(std::memcmp(loaded.layers[0].weight->data.data(), model.layers[0].weight->data.data(),
                      model.layers[0].weight->numel() * sizeof(float)) == 0);
}
