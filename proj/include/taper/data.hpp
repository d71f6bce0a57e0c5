#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "taper/error.hpp"
#include "taper/rng.hpp"
#include "taper/tensor.hpp"

namespace taper::data {

enum class Split { train, test };

// Images are [n x c x h x w]; labels are per-sample class ids for
// classification (empty for reconstruction tasks, where the image itself is
// the target).
template <class T>
struct Dataset {
    TensorPtr<T> images;
    std::vector<int> labels;
    Split split = Split::train;

    std::size_t size() const { return images ? images->dim(0) : 0; }
};

// ---------------------------------------------------------------------------
// CIFAR-10 binary batches (3073-byte records: label byte + 3072 CHW pixels)
// ---------------------------------------------------------------------------

namespace detail {

constexpr std::size_t kCifarRecord = 3073;
constexpr std::size_t kCifarPixels = 3072;

template <class T>
void read_cifar_file(const std::string& path, std::vector<T>& pixels, std::vector<int>& labels) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cifar10: cannot open " + path);
    in.seekg(0, std::ios::end);
    const std::size_t size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    if (size == 0 || size % kCifarRecord != 0)
        throw FormatError("cifar10: " + path + " is not a whole number of 3073-byte records",
                          size - size % kCifarRecord);
    std::vector<unsigned char> buf(size);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
    if (static_cast<std::size_t>(in.gcount()) != size)
        throw FormatError("cifar10: short read on " + path, static_cast<std::size_t>(in.gcount()));
    const std::size_t records = size / kCifarRecord;
    for (std::size_t r = 0; r < records; ++r) {
        const unsigned char* rec = buf.data() + r * kCifarRecord;
        if (rec[0] > 9)
            throw IndexError("cifar10: label byte " + std::to_string(int(rec[0])) +
                             " out of range [0,10) in " + path + " record " + std::to_string(r));
        labels.push_back(rec[0]);
        for (std::size_t i = 0; i < kCifarPixels; ++i)
            pixels.push_back(static_cast<T>(rec[1 + i]) / T(255));
    }
}

}  // namespace detail

// Loads the standard binary batch files from `dir`: data_batch_1..5.bin for
// the train split, test_batch.bin for the test split. Pixels are scaled to
// [0,1]; standardize() applies the train-statistics normalization.
template <class T>
Dataset<T> load_cifar10_binary(const std::string& dir, Split split) {
    std::vector<std::string> files;
    if (split == Split::train) {
        for (int i = 1; i <= 5; ++i)
            files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
    } else {
        files.push_back(dir + "/test_batch.bin");
    }
    std::vector<T> pixels;
    std::vector<int> labels;
    for (const auto& f : files) detail::read_cifar_file<T>(f, pixels, labels);
    Dataset<T> ds;
    ds.split = split;
    ds.labels = std::move(labels);
    ds.images = make_tensor<T>({ds.labels.size(), 3, 32, 32}, std::move(pixels));
    return ds;
}

// ---------------------------------------------------------------------------
// IDX (big-endian; magic 0x00000803 for images, 0x00000801 for labels)
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path, std::size_t& offset) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw FormatError("idx: truncated " + path, offset);
    offset += 4;
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

template <class T>
Dataset<T> load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream im(images_path, std::ios::binary);
    if (!im) throw FormatError("idx: cannot open " + images_path);
    std::size_t off = 0;
    const std::uint32_t magic = detail::read_be32(im, images_path, off);
    if (magic != 0x00000803u)
        throw FormatError("idx: bad image magic in " + images_path, 0);
    const std::uint32_t n = detail::read_be32(im, images_path, off);
    const std::uint32_t h = detail::read_be32(im, images_path, off);
    const std::uint32_t w = detail::read_be32(im, images_path, off);
    if (n == 0 || h == 0 || w == 0)
        throw FormatError("idx: zero dimension in " + images_path, 4);
    std::vector<unsigned char> buf(static_cast<std::size_t>(n) * h * w);
    im.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(im.gcount()) != buf.size())
        throw FormatError("idx: payload shorter than header dims in " + images_path,
                          off + static_cast<std::size_t>(im.gcount()));
    char extra;
    if (im.read(&extra, 1))
        throw FormatError("idx: payload longer than header dims in " + images_path,
                          off + buf.size());

    std::ifstream lb(labels_path, std::ios::binary);
    if (!lb) throw FormatError("idx: cannot open " + labels_path);
    std::size_t loff = 0;
    const std::uint32_t lmagic = detail::read_be32(lb, labels_path, loff);
    if (lmagic != 0x00000801u)
        throw FormatError("idx: bad label magic in " + labels_path, 0);
    const std::uint32_t ln = detail::read_be32(lb, labels_path, loff);
    if (ln != n)
        throw FormatError("idx: label count " + std::to_string(ln) + " != image count " +
                              std::to_string(n),
                          4);
    std::vector<unsigned char> lbuf(ln);
    lb.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(ln));
    if (static_cast<std::size_t>(lb.gcount()) != ln)
        throw FormatError("idx: truncated " + labels_path, loff + static_cast<std::size_t>(lb.gcount()));

    Dataset<T> ds;
    std::vector<T> pixels;
    pixels.reserve(buf.size());
    for (unsigned char b : buf) pixels.push_back(static_cast<T>(b) / T(255));
    ds.images = make_tensor<T>({n, 1, h, w}, std::move(pixels));
    ds.labels.assign(lbuf.begin(), lbuf.end());
    return ds;
}

// Writes images (scaled back to bytes) + labels in IDX format; used to build
// fixtures and to round-trip small datasets.
template <class T>
void write_idx(const Dataset<T>& ds, const std::string& images_path,
               const std::string& labels_path) {
    if (!ds.images || ds.images->ndim() != 4 || ds.images->dim(1) != 1)
        throw ContractError("write_idx: expected [n x 1 x h x w] images");
    std::ofstream im(images_path, std::ios::binary);
    if (!im) throw FormatError("idx: cannot open " + images_path + " for writing");
    detail::write_be32(im, 0x00000803u);
    detail::write_be32(im, static_cast<std::uint32_t>(ds.images->dim(0)));
    detail::write_be32(im, static_cast<std::uint32_t>(ds.images->dim(2)));
    detail::write_be32(im, static_cast<std::uint32_t>(ds.images->dim(3)));
    for (const T v : ds.images->data) {
        const int b = std::clamp(static_cast<int>(std::lround(static_cast<double>(v) * 255.0)), 0,
                                 255);
        const unsigned char byte = static_cast<unsigned char>(b);
        im.write(reinterpret_cast<const char*>(&byte), 1);
    }
    std::ofstream lb(labels_path, std::ios::binary);
    if (!lb) throw FormatError("idx: cannot open " + labels_path + " for writing");
    detail::write_be32(lb, 0x00000801u);
    detail::write_be32(lb, static_cast<std::uint32_t>(ds.labels.size()));
    for (int l : ds.labels) {
        const unsigned char byte = static_cast<unsigned char>(l);
        lb.write(reinterpret_cast<const char*>(&byte), 1);
    }
}

// ---------------------------------------------------------------------------
// synthetic blobs: class-conditional Gaussian texture patches
// ---------------------------------------------------------------------------

// Each class has a fixed template pattern (a pure function of k, channels and
// image size, so separately seeded train/test draws share class structure);
// a sample is snr * template + unit Gaussian noise. With random templates in
// pixel space the classes are linearly separable for moderate snr.
template <class T>
Dataset<T> synth_blobs(std::size_t classes, std::size_t per_class, std::size_t image_size,
                       std::uint64_t seed, std::size_t channels = 3, double snr = 1.0) {
    if (classes < 2) throw ContractError("synth_blobs: need at least 2 classes");
    if (per_class == 0 || image_size == 0) throw ContractError("synth_blobs: empty dataset");
    const std::size_t d = channels * image_size * image_size;

    std::vector<std::vector<double>> templates(classes, std::vector<double>(d));
    for (std::size_t c = 0; c < classes; ++c) {
        Rng trng(Rng::mix(0x7e3a91c2u, c * 1024 + classes * 8 + channels + image_size));
        for (auto& v : templates[c]) v = trng.normal();
    }

    const std::size_t n = classes * per_class;
    Rng rng(seed);
    std::vector<T> pixels(n * d);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % classes;
        labels[i] = static_cast<int>(c);
        T* px = pixels.data() + i * d;
        for (std::size_t j = 0; j < d; ++j)
            px[j] = static_cast<T>(snr * templates[c][j] + rng.normal());
    }
    Dataset<T> ds;
    ds.images = make_tensor<T>({n, channels, image_size, image_size}, std::move(pixels));
    ds.labels = std::move(labels);
    return ds;
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

// Per-channel standardization using the train split's statistics; the same
// affine map is applied to every dataset passed in `others`.
template <class T>
void standardize(Dataset<T>& train, std::vector<Dataset<T>*> others = {}) {
    const std::size_t n = train.images->dim(0), c = train.images->dim(1);
    const std::size_t spatial = train.images->numel() / (n * c);
    std::vector<double> mean(c, 0.0), stddev(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double total = 0;
        for (std::size_t s = 0; s < n; ++s) {
            const T* p = train.images->data.data() + (s * c + ch) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) total += static_cast<double>(p[i]);
        }
        mean[ch] = total / static_cast<double>(n * spatial);
        double ss = 0;
        for (std::size_t s = 0; s < n; ++s) {
            const T* p = train.images->data.data() + (s * c + ch) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                const double dd = static_cast<double>(p[i]) - mean[ch];
                ss += dd * dd;
            }
        }
        stddev[ch] = std::sqrt(ss / static_cast<double>(n * spatial));
        if (stddev[ch] == 0.0) stddev[ch] = 1.0;  // constant channel
    }
    auto apply = [&](Dataset<T>& ds) {
        const std::size_t dn = ds.images->dim(0);
        for (std::size_t s = 0; s < dn; ++s) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                T* p = ds.images->data.data() + (s * c + ch) * spatial;
                for (std::size_t i = 0; i < spatial; ++i)
                    p[i] = static_cast<T>((static_cast<double>(p[i]) - mean[ch]) / stddev[ch]);
            }
        }
    };
    apply(train);
    for (auto* ds : others) {
        if (ds) apply(*ds);
    }
}

// ---------------------------------------------------------------------------
// augmentation: zero-pad, random crop back to size, random horizontal flip
// ---------------------------------------------------------------------------

struct AugmentConfig {
    std::size_t pad = 4;
    double flip_prob = 0.5;
    bool enabled = false;
};

template <class T>
void augment_in_place(Tensor<T>& images, const AugmentConfig& cfg, Rng& rng) {
    if (!cfg.enabled) return;
    const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    const std::size_t ph = h + 2 * cfg.pad, pw = w + 2 * cfg.pad;
    if (ph < h || pw < w) throw ConfigError("augment: crop larger than padded image");
    std::vector<T> padded(c * ph * pw);
    for (std::size_t s = 0; s < n; ++s) {
        T* img = images.data.data() + s * c * h * w;
        std::fill(padded.begin(), padded.end(), T(0));
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t y = 0; y < h; ++y) {
                std::copy(img + (ch * h + y) * w, img + (ch * h + y) * w + w,
                          padded.begin() + (ch * ph + y + cfg.pad) * pw + cfg.pad);
            }
        }
        const std::size_t oy = cfg.pad ? rng.uniform_int(2 * cfg.pad + 1) : 0;
        const std::size_t ox = cfg.pad ? rng.uniform_int(2 * cfg.pad + 1) : 0;
        const bool flip = cfg.flip_prob > 0.0 && rng.bernoulli(cfg.flip_prob);
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t y = 0; y < h; ++y) {
                const T* row = padded.data() + (ch * ph + y + oy) * pw + ox;
                T* dst = img + (ch * h + y) * w;
                if (flip) {
                    for (std::size_t x = 0; x < w; ++x) dst[x] = row[w - 1 - x];
                } else {
                    std::copy(row, row + w, dst);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

template <class T>
struct Batch {
    TensorPtr<T> images;
    std::vector<int> labels;
};

// Visits every sample exactly once per epoch in an order determined by
// (seed, epoch); the last short batch is kept. Augmentation, when configured,
// draws from the same deterministic stream.
template <class T>
class BatchIterator {
  public:
    BatchIterator(const Dataset<T>& ds, std::size_t batch_size, std::uint64_t seed,
                  AugmentConfig aug = {}, bool shuffle = true)
        : ds_(&ds), batch_size_(batch_size), seed_(seed), aug_(aug), shuffle_(shuffle) {
        if (batch_size == 0) throw ContractError("batch iterator: batch size must be positive");
        begin_epoch(1);
    }

    void begin_epoch(std::size_t epoch) {
        rng_ = Rng(Rng::mix(seed_, epoch));
        order_.resize(ds_->size());
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        if (shuffle_) {
            // Fisher-Yates on our own stream
            for (std::size_t i = order_.size(); i > 1; --i) {
                const std::size_t j = rng_.uniform_int(i);
                std::swap(order_[i - 1], order_[j]);
            }
        }
        cursor_ = 0;
    }

    bool next(Batch<T>& out) {
        if (cursor_ >= order_.size()) return false;
        const std::size_t take = std::min(batch_size_, order_.size() - cursor_);
        const std::size_t c = ds_->images->dim(1), h = ds_->images->dim(2),
                          w = ds_->images->dim(3);
        const std::size_t sample = c * h * w;
        std::vector<T> px(take * sample);
        out.labels.resize(take);
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t src = order_[cursor_ + i];
            std::copy(ds_->images->data.begin() + src * sample,
                      ds_->images->data.begin() + (src + 1) * sample, px.begin() + i * sample);
            out.labels[i] = src < ds_->labels.size() ? ds_->labels[src] : 0;
        }
        out.images = make_tensor<T>({take, c, h, w}, std::move(px));
        if (aug_.enabled) augment_in_place(*out.images, aug_, rng_);
        cursor_ += take;
        return true;
    }

    std::size_t batches_per_epoch() const {
        return (ds_->size() + batch_size_ - 1) / batch_size_;
    }

  private:
    const Dataset<T>* ds_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    AugmentConfig aug_;
    bool shuffle_;
    Rng rng_{0};
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

}  // namespace taper::data
