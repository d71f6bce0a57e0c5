#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "taper/layers.hpp"

// Checkpoint file layout (version 1, little-endian throughout; see
// docs/checkpoint_format.md):
//   magic "TAPERNET" | u32 version | u32 scalar_size | u32 task |
//   input shape (u64 ndim, u64 dims...) | u64 layer count |
//   per layer: u32 kind, u32 has_bias, u64 out_filters, kh, kw, stride, pad,
//              f64 gamma_init, eps, momentum |
//   mask (u64 len, u8 bytes...) |
//   per layer, in declaration order, each array as u64 count + raw scalars:
//     dense/conv: weight [bias]; batchnorm: gamma beta running_mean
//     running_var; scaling: gamma |
//   trailer "TAPEREND"

namespace taper::checkpoint {

namespace detail {

constexpr char kMagic[8] = {'T', 'A', 'P', 'E', 'R', 'N', 'E', 'T'};
constexpr char kTrailer[8] = {'T', 'A', 'P', 'E', 'R', 'E', 'N', 'D'};
constexpr std::uint32_t kVersion = 1;

class Writer {
  public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw FormatError("cannot open checkpoint for writing: " + path);
    }

    void bytes(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void u64(std::uint64_t v) { bytes(&v, 8); }
    void f64(double v) { bytes(&v, 8); }

    template <class T>
    void array(const std::vector<T>& v) {
        u64(v.size());
        bytes(v.data(), v.size() * sizeof(T));
    }

    void close(const std::string& path) {
        out_.flush();
        if (!out_) throw FormatError("write failure on checkpoint: " + path);
    }

  private:
    std::ofstream out_;
};

class Reader {
  public:
    explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw FormatError("cannot open checkpoint: " + path);
    }

    std::size_t offset() const { return offset_; }

    void bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw FormatError("truncated checkpoint " + path_, offset_);
        offset_ += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        bytes(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        bytes(&v, 8);
        return v;
    }
    double f64() {
        double v;
        bytes(&v, 8);
        return v;
    }

    template <class T>
    std::vector<T> array(std::uint64_t expected) {
        const std::size_t at = offset_;
        const std::uint64_t n = u64();
        if (n != expected)
            throw FormatError("array length " + std::to_string(n) + " != expected " +
                                  std::to_string(expected) + " in " + path_,
                              at);
        std::vector<T> v(n);
        bytes(v.data(), n * sizeof(T));
        return v;
    }

  private:
    std::ifstream in_;
    std::string path_;
    std::size_t offset_ = 0;
};

}  // namespace detail

template <class T>
void save(const Model<T>& model, const std::string& path) {
    detail::Writer w(path);
    w.bytes(detail::kMagic, 8);
    w.u32(detail::kVersion);
    w.u32(static_cast<std::uint32_t>(sizeof(T)));
    w.u32(static_cast<std::uint32_t>(model.spec.task));
    w.u64(model.spec.input_shape.size());
    for (std::size_t d : model.spec.input_shape) w.u64(d);
    w.u64(model.spec.layers.size());
    for (const LayerConfig& lc : model.spec.layers) {
        w.u32(static_cast<std::uint32_t>(lc.kind));
        w.u32(lc.bias ? 1 : 0);
        w.u64(lc.out_filters);
        w.u64(lc.kh);
        w.u64(lc.kw);
        w.u64(lc.stride);
        w.u64(lc.pad);
        w.f64(lc.gamma_init);
        w.f64(lc.eps);
        w.f64(lc.momentum);
    }
    w.u64(model.mask.size());
    w.bytes(model.mask.data(), model.mask.size());
    for (const LayerState<T>& st : model.layers) {
        switch (st.kind) {
            case LayerKind::dense:
            case LayerKind::conv2d:
                w.array(st.weight->data);
                if (st.bias) w.array(st.bias->data);
                break;
            case LayerKind::batchnorm:
                w.array(st.gamma->data);
                w.array(st.beta->data);
                w.array(st.running_mean);
                w.array(st.running_var);
                break;
            case LayerKind::scaling:
                w.array(st.gamma->data);
                break;
            default:
                break;
        }
    }
    w.bytes(detail::kTrailer, 8);
    w.close(path);
}

template <class T>
Model<T> load(const std::string& path) {
    detail::Reader r(path);
    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, detail::kMagic, 8) != 0)
        throw FormatError("bad magic bytes in " + path, 0);
    const std::uint32_t version = r.u32();
    if (version != detail::kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " in " +
                              path,
                          8);
    const std::uint32_t ssize = r.u32();
    if (ssize != sizeof(T))
        throw FormatError("checkpoint scalar width " + std::to_string(ssize) +
                              " does not match requested precision " +
                              std::to_string(sizeof(T)),
                          12);
    NetworkSpec spec;
    const std::uint32_t task = r.u32();
    if (task > 1) throw FormatError("bad task id in " + path, 16);
    spec.task = static_cast<TaskKind>(task);
    const std::uint64_t ndim = r.u64();
    if (ndim == 0 || ndim > 8) throw FormatError("implausible input rank in " + path, r.offset());
    for (std::uint64_t i = 0; i < ndim; ++i) spec.input_shape.push_back(r.u64());
    const std::uint64_t nlayers = r.u64();
    if (nlayers == 0 || nlayers > 4096)
        throw FormatError("implausible layer count in " + path, r.offset());
    for (std::uint64_t i = 0; i < nlayers; ++i) {
        LayerConfig lc{};
        const std::uint32_t kind = r.u32();
        if (kind > static_cast<std::uint32_t>(LayerKind::flatten))
            throw FormatError("bad layer kind in " + path, r.offset());
        lc.kind = static_cast<LayerKind>(kind);
        lc.bias = r.u32() != 0;
        lc.out_filters = r.u64();
        lc.kh = r.u64();
        lc.kw = r.u64();
        lc.stride = r.u64();
        lc.pad = r.u64();
        lc.gamma_init = r.f64();
        lc.eps = r.f64();
        lc.momentum = r.f64();
        spec.layers.push_back(lc);
    }
    // structural sanity before trusting array sizes
    const auto shapes = infer_shapes(spec);
    Model<T> model;
    model.spec = spec;

    const std::uint64_t mask_len = r.u64();
    if (mask_len != total_prunable_filters(spec))
        throw FormatError("mask length mismatch in " + path, r.offset());
    model.mask.resize(mask_len);
    if (mask_len) r.bytes(model.mask.data(), mask_len);

    Shape cur = spec.input_shape;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerConfig& lc = spec.layers[i];
        LayerState<T> st;
        st.kind = lc.kind;
        switch (lc.kind) {
            case LayerKind::dense: {
                const std::size_t in = cur[0];
                st.weight = make_param<T>({lc.out_filters, in},
                                          r.template array<T>(lc.out_filters * in));
                if (lc.bias)
                    st.bias = make_param<T>({lc.out_filters}, r.template array<T>(lc.out_filters));
                break;
            }
            case LayerKind::conv2d: {
                const std::size_t c = cur[0];
                const std::size_t n = lc.out_filters * c * lc.kh * lc.kw;
                st.weight =
                    make_param<T>({lc.out_filters, c, lc.kh, lc.kw}, r.template array<T>(n));
                if (lc.bias)
                    st.bias = make_param<T>({lc.out_filters}, r.template array<T>(lc.out_filters));
                break;
            }
            case LayerKind::batchnorm: {
                const std::size_t f = cur[0];
                st.gamma = make_param<T>({f}, r.template array<T>(f));
                st.beta = make_param<T>({f}, r.template array<T>(f));
                st.running_mean = r.template array<T>(f);
                st.running_var = r.template array<T>(f);
                break;
            }
            case LayerKind::scaling: {
                const std::size_t f = cur[0];
                st.gamma = make_param<T>({f}, r.template array<T>(f));
                break;
            }
            default:
                break;
        }
        model.layers.push_back(std::move(st));
        cur = shapes[i];
    }
    char trailer[8];
    r.bytes(trailer, 8);
    if (std::memcmp(trailer, detail::kTrailer, 8) != 0)
        throw FormatError("bad trailer in " + path, r.offset() - 8);
    return model;
}

}  // namespace taper::checkpoint
