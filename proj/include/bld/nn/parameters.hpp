// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bld/common/bytes.hpp"
#include "bld/common/errors.hpp"
#include "bld/nn/tensor.hpp"

namespace bld {

enum class LayerKind : std::uint8_t { dense, relu };

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Dense layers of the given widths, each followed by a relu.
inline std::vector<LayerSpec> mlp_spec(std::size_t input_dim, std::span<const std::size_t> widths) {
    if (input_dim == 0) throw ArgumentError("mlp_spec: input_dim must be positive");
    std::vector<LayerSpec> spec;
    std::size_t in = input_dim;
    for (std::size_t w : widths) {
        if (w == 0) throw ArgumentError("mlp_spec: layer width must be positive");
        spec.push_back({LayerKind::dense, in, w});
        spec.push_back({LayerKind::relu, w, w});
        in = w;
    }
    return spec;
}

/// Weight [in x out] and bias [out] of one dense layer. The pair is the
/// granularity of per-layer gradient norms.
template <typename S>
struct DenseBlock {
    std::string name;
    Matrix<S> weight;
    RowVector<S> bias;

    std::size_t size() const noexcept {
        return static_cast<std::size_t>(weight.size() + bias.size());
    }

    bool same_shape(const DenseBlock& other) const noexcept {
        return weight.rows() == other.weight.rows() && weight.cols() == other.weight.cols() &&
               bias.size() == other.bias.size();
    }
};

namespace detail {

inline constexpr std::uint32_t kBlockSetMagic = 0x50444C42;  // "BLDP"

template <typename S>
class BlockList {
public:
    using Scalar = S;

    std::size_t num_blocks() const noexcept { return blocks_.size(); }
    const DenseBlock<S>& block(std::size_t i) const { return blocks_.at(i); }
    DenseBlock<S>& block(std::size_t i) { return blocks_.at(i); }
    std::span<const DenseBlock<S>> blocks() const noexcept { return blocks_; }
    std::span<DenseBlock<S>> blocks() noexcept { return blocks_; }

    std::size_t param_count() const noexcept {
        std::size_t n = 0;
        for (const auto& b : blocks_) n += b.size();
        return n;
    }

    std::size_t payload_bytes() const noexcept { return param_count() * sizeof(S); }

    /// Exact size of serialize() output.
    std::size_t byte_size() const noexcept {
        std::size_t n = 4 + 1 + 4;
        for (const auto& b : blocks_) n += 4 + b.name.size() + 4 + 4;
        return n + payload_bytes();
    }

    /// Canonical form: magic, scalar width, block count, per-block name and
    /// weight shape, then every block's weight (row-major) and bias as
    /// little-endian floats in layer order.
    std::vector<std::byte> serialize() const {
        ByteWriter w;
        w.buffer().reserve(byte_size());
        w.put(kBlockSetMagic);
        w.put(static_cast<std::uint8_t>(sizeof(S)));
        w.put(static_cast<std::uint32_t>(blocks_.size()));
        for (const auto& b : blocks_) {
            w.put_string(b.name);
            w.put(static_cast<std::uint32_t>(b.weight.rows()));
            w.put(static_cast<std::uint32_t>(b.weight.cols()));
        }
        for (const auto& b : blocks_) {
            w.put_all(std::span<const S>(b.weight.data(), static_cast<std::size_t>(b.weight.size())));
            w.put_all(std::span<const S>(b.bias.data(), static_cast<std::size_t>(b.bias.size())));
        }
        return w.take();
    }

    bool same_shape(const BlockList& other) const noexcept {
        if (blocks_.size() != other.blocks_.size()) return false;
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            if (!blocks_[i].same_shape(other.blocks_[i])) return false;
        }
        return true;
    }

    /// Bitwise equality of names, shapes and values.
    bool identical(const BlockList& other) const { return serialize() == other.serialize(); }

protected:
    void append_block(DenseBlock<S> b) { blocks_.push_back(std::move(b)); }

    static std::vector<DenseBlock<S>> parse(std::span<const std::byte> bytes) {
        ByteReader r(bytes);
        if (r.get<std::uint32_t>() != kBlockSetMagic) throw FormatError("parameter blob: bad magic");
        if (r.get<std::uint8_t>() != sizeof(S)) throw FormatError("parameter blob: scalar width mismatch");
        const auto n = r.get<std::uint32_t>();
        std::vector<DenseBlock<S>> blocks(n);
        for (auto& b : blocks) {
            b.name = r.get_string();
            const auto rows = r.get<std::uint32_t>();
            const auto cols = r.get<std::uint32_t>();
            b.weight.resize(rows, cols);
            b.bias.resize(cols);
        }
        for (auto& b : blocks) {
            r.get_all(std::span<S>(b.weight.data(), static_cast<std::size_t>(b.weight.size())));
            r.get_all(std::span<S>(b.bias.data(), static_cast<std::size_t>(b.bias.size())));
        }
        if (!r.at_end()) throw FormatError("parameter blob: trailing bytes");
        return blocks;
    }

    std::vector<DenseBlock<S>> blocks_;
};

}  // namespace detail

template <typename S>
class GradientSet;

/// θ: every trainable block of the network, extractor first, then heads.
template <typename S>
class ParameterSet : public detail::BlockList<S> {
public:
    ParameterSet() = default;

    void add_block(std::string name, Matrix<S> weight, RowVector<S> bias) {
        if (weight.cols() != bias.size()) throw ShapeError("add_block: bias does not match weight");
        this->append_block({std::move(name), std::move(weight), std::move(bias)});
    }

    static ParameterSet deserialize(std::span<const std::byte> bytes) {
        ParameterSet p;
        p.blocks_ = detail::BlockList<S>::parse(bytes);
        return p;
    }
};

/// G: one gradient block per parameter block.
template <typename S>
class GradientSet : public detail::BlockList<S> {
public:
    GradientSet() = default;

    /// All-zero gradient congruent with `params`.
    static GradientSet zeros_like(const detail::BlockList<S>& params) {
        GradientSet g;
        for (const auto& b : params.blocks()) {
            g.append_block({b.name, Matrix<S>::Zero(b.weight.rows(), b.weight.cols()),
                            RowVector<S>::Zero(b.bias.size())});
        }
        return g;
    }

    GradientSet& accumulate(const GradientSet& other) {
        if (!this->same_shape(other)) throw ShapeError("GradientSet::accumulate: shape mismatch");
        for (std::size_t i = 0; i < this->blocks_.size(); ++i) {
            this->blocks_[i].weight += other.blocks_[i].weight;
            this->blocks_[i].bias += other.blocks_[i].bias;
        }
        return *this;
    }

    GradientSet& scale(S factor) {
        for (auto& b : this->blocks_) {
            b.weight *= factor;
            b.bias *= factor;
        }
        return *this;
    }

    void scale_block(std::size_t i, S factor) {
        auto& b = this->block(i);
        b.weight *= factor;
        b.bias *= factor;
    }
};

/// In-place θ ← θ − α·G. Leaves θ untouched if the result would be non-finite.
template <typename S>
void sgd_step(ParameterSet<S>& theta, const GradientSet<S>& grad, double alpha) {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ArgumentError("sgd_step: alpha must be >= 0");
    if (!theta.same_shape(grad)) throw ShapeError("sgd_step: gradient does not match parameters");
    for (std::size_t i = 0; i < theta.num_blocks(); ++i) {
        const auto& g = grad.block(i);
        require_finite(g.weight, g.name);
        require_finite(g.bias, g.name);
    }
    const S a = static_cast<S>(alpha);
    for (std::size_t i = 0; i < theta.num_blocks(); ++i) {
        auto& p = theta.block(i);
        const auto& g = grad.block(i);
        if (!(p.weight - a * g.weight).allFinite() || !(p.bias - a * g.bias).allFinite()) {
            throw NumericError("sgd_step: non-finite update in " + p.name);
        }
    }
    for (std::size_t i = 0; i < theta.num_blocks(); ++i) {
        auto& p = theta.block(i);
        const auto& g = grad.block(i);
        p.weight -= a * g.weight;
        p.bias -= a * g.bias;
    }
}

/// L2 norm of each dense block, weight and bias taken together.
template <typename S>
std::vector<double> layer_norms(const detail::BlockList<S>& grad) {
    std::vector<double> norms;
    norms.reserve(grad.num_blocks());
    for (const auto& b : grad.blocks()) {
        const double sq = b.weight.template cast<double>().squaredNorm() +
                          b.bias.template cast<double>().squaredNorm();
        norms.push_back(std::sqrt(sq));
    }
    return norms;
}

}  // namespace bld
