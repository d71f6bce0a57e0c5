#include <doctest.h>

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "taper/data.hpp"

using namespace taper;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        const auto tick = std::chrono::steady_clock::now().time_since_epoch().count();
        path = std::filesystem::temp_directory_path() / ("taper_data_" + std::to_string(tick));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

// a well-formed CIFAR-10 record: label + 3072 pixel bytes
std::vector<unsigned char> cifar_record(unsigned char label, unsigned char fill) {
    std::vector<unsigned char> rec(3073, fill);
    rec[0] = label;
    return rec;
}

}  // namespace

TEST_CASE("cifar10 loader") {
    TempDir tmp;
    SUBCASE("well-formed two-record test batch") {
        auto r1 = cifar_record(3, 10);
        auto r2 = cifar_record(7, 200);
        std::vector<unsigned char> bytes = r1;
        bytes.insert(bytes.end(), r2.begin(), r2.end());
        write_bytes(tmp.file("test_batch.bin"), bytes);
        auto ds = data::load_cifar10_binary<double>(tmp.path.string(), data::Split::test);
        CHECK(ds.size() == 2);
        CHECK(ds.images->shape == Shape{2, 3, 32, 32});
        CHECK(ds.labels == std::vector<int>{3, 7});
        CHECK(ds.images->data[0] == doctest::Approx(10.0 / 255.0));
        CHECK(ds.images->data[3072] == doctest::Approx(200.0 / 255.0));
    }
    SUBCASE("truncated record is a format error with an offset") {
        auto rec = cifar_record(1, 5);
        rec.resize(3000);
        write_bytes(tmp.file("test_batch.bin"), rec);
        CHECK_THROWS_AS(data::load_cifar10_binary<double>(tmp.path.string(), data::Split::test),
                        FormatError);
    }
    SUBCASE("label byte out of range") {
        write_bytes(tmp.file("test_batch.bin"), cifar_record(255, 0));
        CHECK_THROWS_AS(data::load_cifar10_binary<double>(tmp.path.string(), data::Split::test),
                        IndexError);
    }
    SUBCASE("missing train files") {
        CHECK_THROWS_AS(data::load_cifar10_binary<double>(tmp.path.string(), data::Split::train),
                        FormatError);
    }
}

TEST_CASE("idx loader") {
    TempDir tmp;
    SUBCASE("write then read round-trips") {
        data::Dataset<double> ds;
        Rng rng(3);
        std::vector<double> px(4 * 5 * 6);
        for (auto& v : px) v = rng.uniform_int(256) / 255.0;
        ds.images = make_tensor<double>({4, 1, 5, 6}, std::move(px));
        ds.labels = {0, 1, 2, 3};
        data::write_idx(ds, tmp.file("img.idx"), tmp.file("lbl.idx"));
        auto back = data::load_idx<double>(tmp.file("img.idx"), tmp.file("lbl.idx"));
        CHECK(back.size() == 4);
        CHECK(back.images->shape == Shape{4, 1, 5, 6});
        CHECK(back.labels == ds.labels);
        for (std::size_t i = 0; i < ds.images->numel(); ++i)
            CHECK(back.images->data[i] == doctest::Approx(ds.images->data[i]).epsilon(1e-12));
    }
    SUBCASE("bad image magic") {
        write_bytes(tmp.file("img.idx"), {0, 0, 8, 99, 0, 0, 0, 1});
        write_bytes(tmp.file("lbl.idx"), {0, 0, 8, 1, 0, 0, 0, 1, 0});
        CHECK_THROWS_AS(data::load_idx<double>(tmp.file("img.idx"), tmp.file("lbl.idx")),
                        FormatError);
    }
    SUBCASE("payload shorter than header dims") {
        // header says 2x2x2 but only 4 payload bytes follow
        std::vector<unsigned char> img = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2,
                                          0, 0, 0, 2, 9, 9, 9, 9};
        write_bytes(tmp.file("img.idx"), img);
        std::vector<unsigned char> lbl = {0, 0, 8, 1, 0, 0, 0, 2, 1, 0};
        write_bytes(tmp.file("lbl.idx"), lbl);
        CHECK_THROWS_AS(data::load_idx<double>(tmp.file("img.idx"), tmp.file("lbl.idx")),
                        FormatError);
    }
}

TEST_CASE("synth blobs") {
    SUBCASE("balanced classes, deterministic per seed") {
        auto a = data::synth_blobs<double>(2, 100, 8, 5);
        CHECK(a.size() == 200);
        std::map<int, int> counts;
        for (int l : a.labels) ++counts[l];
        CHECK(counts[0] == 100);
        CHECK(counts[1] == 100);
        auto b = data::synth_blobs<double>(2, 100, 8, 5);
        CHECK(std::memcmp(a.images->data.data(), b.images->data.data(),
                          a.images->numel() * sizeof(double)) == 0);
        auto c = data::synth_blobs<double>(2, 100, 8, 6);
        CHECK(std::memcmp(a.images->data.data(), c.images->data.data(),
                          a.images->numel() * sizeof(double)) != 0);
    }
    SUBCASE("different seeds share class templates") {
        // class means across many samples should align between two draws
        auto a = data::synth_blobs<double>(2, 400, 4, 1, 1, 2.0);
        auto b = data::synth_blobs<double>(2, 400, 4, 2, 1, 2.0);
        const std::size_t d = 16;
        for (int cls = 0; cls < 2; ++cls) {
            std::vector<double> ma(d, 0), mb(d, 0);
            for (std::size_t i = 0; i < a.size(); ++i) {
                if (a.labels[i] != cls) continue;
                for (std::size_t j = 0; j < d; ++j) ma[j] += a.images->data[i * d + j];
            }
            for (std::size_t i = 0; i < b.size(); ++i) {
                if (b.labels[i] != cls) continue;
                for (std::size_t j = 0; j < d; ++j) mb[j] += b.images->data[i * d + j];
            }
            double corr = 0, na = 0, nb = 0;
            for (std::size_t j = 0; j < d; ++j) {
                corr += ma[j] * mb[j];
                na += ma[j] * ma[j];
                nb += mb[j] * mb[j];
            }
            CHECK(corr / std::sqrt(na * nb) > 0.95);
        }
    }
    SUBCASE("preconditions") {
        CHECK_THROWS_AS(data::synth_blobs<double>(1, 10, 8, 1), ContractError);
        CHECK_THROWS_AS(data::synth_blobs<double>(2, 0, 8, 1), ContractError);
    }
}

TEST_CASE("standardization uses train statistics") {
    auto train = data::synth_blobs<double>(3, 200, 6, 11);
    auto test = data::synth_blobs<double>(3, 50, 6, 12);
    data::standardize(train, {&test});
    const std::size_t n = train.size(), c = 3, spatial = 36;
    for (std::size_t ch = 0; ch < c; ++ch) {
        double mean = 0, var = 0;
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t i = 0; i < spatial; ++i)
                mean += train.images->data[(s * c + ch) * spatial + i];
        mean /= static_cast<double>(n * spatial);
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t i = 0; i < spatial; ++i) {
                const double d = train.images->data[(s * c + ch) * spatial + i] - mean;
                var += d * d;
            }
        var /= static_cast<double>(n * spatial);
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-6);
    }
    // the test split is shifted by the same map, not re-standardized
    double test_mean = 0;
    for (double v : test.images->data) test_mean += v;
    test_mean /= static_cast<double>(test.images->numel());
    CHECK(test_mean != doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("augmentation") {
    Rng rng(17);
    auto make_images = [&]() {
        auto t = Tensor<double>({2, 1, 4, 4});
        for (auto& v : t.data) v = rng.normal();
        return t;
    };
    SUBCASE("pad 0 and flip prob 0 is the identity") {
        auto imgs = make_images();
        auto copy = imgs;
        Rng arng(1);
        data::augment_in_place(imgs, {.pad = 0, .flip_prob = 0.0, .enabled = true}, arng);
        CHECK(imgs.data == copy.data);
    }
    SUBCASE("flip is an involution") {
        auto imgs = make_images();
        auto copy = imgs;
        Rng arng(1);
        data::augment_in_place(imgs, {.pad = 0, .flip_prob = 1.0, .enabled = true}, arng);
        CHECK(imgs.data != copy.data);
        Rng arng2(2);
        data::augment_in_place(imgs, {.pad = 0, .flip_prob = 1.0, .enabled = true}, arng2);
        CHECK(imgs.data == copy.data);
    }
    SUBCASE("deterministic per rng seed and shape-preserving") {
        auto a = make_images();
        auto b = a;
        Rng r1(7), r2(7);
        data::AugmentConfig cfg{.pad = 2, .flip_prob = 0.5, .enabled = true};
        data::augment_in_place(a, cfg, r1);
        data::augment_in_place(b, cfg, r2);
        CHECK(a.data == b.data);
        CHECK(a.shape == Shape{2, 1, 4, 4});
    }
}

TEST_CASE("batch iterator") {
    auto ds = data::synth_blobs<double>(2, 51, 4, 23);  // 102 samples
    SUBCASE("epoch coverage with a short last batch") {
        data::BatchIterator<double> it(ds, 20, 9);
        it.begin_epoch(1);
        data::Batch<double> b;
        std::map<std::pair<int, double>, int> seen;  // (label, first pixel) multiset proxy
        std::size_t total = 0, batches = 0, last = 0;
        while (it.next(b)) {
            total += b.images->dim(0);
            last = b.images->dim(0);
            ++batches;
        }
        CHECK(total == 102);
        CHECK(batches == 6);
        CHECK(last == 2);
        CHECK(it.batches_per_epoch() == 6);
    }
    SUBCASE("visits each index exactly once") {
        data::BatchIterator<double> it(ds, 7, 9);
        it.begin_epoch(3);
        data::Batch<double> b;
        std::map<double, int> seen;
        while (it.next(b)) {
            for (std::size_t i = 0; i < b.images->dim(0); ++i)
                ++seen[b.images->data[i * 48]];  // first pixel identifies the sample (continuous)
        }
        std::size_t count = 0;
        for (auto& [k, v] : seen) {
            count += v;
            CHECK(v == 1);
        }
        CHECK(count == 102);
    }
    SUBCASE("deterministic per (seed, epoch), different across epochs") {
        data::BatchIterator<double> i1(ds, 16, 5), i2(ds, 16, 5);
        i1.begin_epoch(2);
        i2.begin_epoch(2);
        data::Batch<double> a, b;
        REQUIRE(i1.next(a));
        REQUIRE(i2.next(b));
        CHECK(a.images->data == b.images->data);
        CHECK(a.labels == b.labels);
        i2.begin_epoch(3);
        REQUIRE(i2.next(b));
        CHECK(a.images->data != b.images->data);
    }
}
