// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bld/common/bytes.hpp"
#include "bld/common/errors.hpp"
#include "bld/common/random.hpp"
#include "bld/nn/ops.hpp"
#include "bld/nn/parameters.hpp"
#include "bld/nn/tensor.hpp"

namespace bld {

/// Metadata of a task head φ_t. Its weight [feature_dim x |Y_t|] and bias
/// live in the network's ParameterSet at `block_index`.
struct Head {
    int task_index = 0;
    std::vector<int> class_labels;  // original dataset label of each output
    std::size_t block_index = 0;

    std::size_t num_classes() const noexcept { return class_labels.size(); }

    int label_at(std::size_t output) const { return class_labels.at(output); }

    std::size_t index_of(int label) const {
        const auto it = std::find(class_labels.begin(), class_labels.end(), label);
        if (it == class_labels.end()) {
            throw ArgumentError("label " + std::to_string(label) + " is not in task " +
                                std::to_string(task_index));
        }
        return static_cast<std::size_t>(it - class_labels.begin());
    }

    friend bool operator==(const Head&, const Head&) = default;
};

namespace detail {

template <typename S>
void uniform_fill(Matrix<S>& m, double bound, Rng& rng) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(uniform(rng, -bound, bound));
}

template <typename S>
void uniform_fill(RowVector<S>& v, double bound, Rng& rng) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<S>(uniform(rng, -bound, bound));
}

}  // namespace detail

/// Shared feature extractor Ψ (dense/relu stack) plus one linear-softmax head
/// per task seen so far. The ParameterSet is the only persistent state.
template <typename S>
class MultiHeadNet {
public:
    MultiHeadNet() = default;

    /// Extractor initialised uniform in ±1/√fan_in.
    MultiHeadNet(std::vector<LayerSpec> extractor, Rng& rng) : extractor_(std::move(extractor)) {
        if (extractor_.empty()) throw ArgumentError("MultiHeadNet: empty extractor");
        std::size_t prev = extractor_.front().in_dim;
        std::size_t dense = 0;
        for (const auto& l : extractor_) {
            if (l.in_dim == 0 || l.out_dim == 0) throw ArgumentError("MultiHeadNet: layer dims must be positive");
            if (l.in_dim != prev) throw ShapeError("MultiHeadNet: layer input does not match previous output");
            if (l.kind == LayerKind::relu && l.in_dim != l.out_dim) throw ShapeError("MultiHeadNet: relu must preserve width");
            if (l.kind == LayerKind::dense) {
                Matrix<S> w(l.in_dim, l.out_dim);
                RowVector<S> b(l.out_dim);
                const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_dim));
                detail::uniform_fill(w, bound, rng);
                detail::uniform_fill(b, bound, rng);
                params_.add_block("extractor.dense" + std::to_string(dense++), std::move(w), std::move(b));
            }
            prev = l.out_dim;
        }
        extractor_blocks_ = dense;
    }

    std::span<const LayerSpec> extractor() const noexcept { return extractor_; }
    std::size_t extractor_blocks() const noexcept { return extractor_blocks_; }
    std::size_t input_dim() const { return extractor_.front().in_dim; }
    std::size_t feature_dim() const { return extractor_.back().out_dim; }

    int current_task() const noexcept { return heads_.empty() ? 0 : heads_.back().task_index; }
    std::span<const Head> heads() const noexcept { return heads_; }

    const Head& head(int task_index) const {
        for (const auto& h : heads_) {
            if (h.task_index == task_index) return h;
        }
        throw ArgumentError("no head for task " + std::to_string(task_index));
    }

    bool has_head(int task_index) const noexcept {
        return std::any_of(heads_.begin(), heads_.end(), [&](const Head& h) { return h.task_index == task_index; });
    }

    const ParameterSet<S>& params() const noexcept { return params_; }
    ParameterSet<S>& params() noexcept { return params_; }

    /// Appends φ_{t+1}, initialised uniform in ±1/√feature_dim. Nothing
    /// else in the ParameterSet is touched.
    const Head& spawn_head(int task_index, std::vector<int> class_labels, Rng& rng) {
        if (task_index <= current_task()) {
            throw ArgumentError("spawn_head: task " + std::to_string(task_index) + " already seen");
        }
        if (task_index != current_task() + 1) {
            throw ArgumentError("spawn_head: tasks must be spawned in order");
        }
        if (class_labels.size() < 2) throw ArgumentError("spawn_head: a head needs at least two classes");
        auto sorted = class_labels;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
            throw ArgumentError("spawn_head: duplicate class label");
        }
        const auto fd = feature_dim();
        const auto classes = class_labels.size();
        Matrix<S> w(fd, classes);
        RowVector<S> b(classes);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fd));
        detail::uniform_fill(w, bound, rng);
        detail::uniform_fill(b, bound, rng);
        params_.add_block("head." + std::to_string(task_index), std::move(w), std::move(b));
        heads_.push_back({task_index, std::move(class_labels), params_.num_blocks() - 1});
        return heads_.back();
    }

    /// Checkpoint: extractor spec, canonical parameter bytes, head metadata.
    std::vector<std::byte> save_checkpoint() const {
        ByteWriter w;
        w.put(kCheckpointMagic);
        w.put(std::uint32_t{1});
        w.put(static_cast<std::uint32_t>(extractor_.size()));
        for (const auto& l : extractor_) {
            w.put(static_cast<std::uint8_t>(l.kind));
            w.put(static_cast<std::uint32_t>(l.in_dim));
            w.put(static_cast<std::uint32_t>(l.out_dim));
        }
        const auto blob = params_.serialize();
        w.put(static_cast<std::uint64_t>(blob.size()));
        w.buffer().insert(w.buffer().end(), blob.begin(), blob.end());
        w.put(static_cast<std::uint32_t>(heads_.size()));
        for (const auto& h : heads_) {
            w.put(static_cast<std::int32_t>(h.task_index));
            w.put(static_cast<std::uint32_t>(h.block_index));
            w.put(static_cast<std::uint32_t>(h.class_labels.size()));
            for (int c : h.class_labels) w.put(static_cast<std::int32_t>(c));
        }
        return w.take();
    }

    static MultiHeadNet load_checkpoint(std::span<const std::byte> bytes) {
        ByteReader r(bytes);
        if (r.get<std::uint32_t>() != kCheckpointMagic) throw FormatError("checkpoint: bad magic");
        if (r.get<std::uint32_t>() != 1) throw FormatError("checkpoint: unsupported version");
        MultiHeadNet net;
        const auto layers = r.get<std::uint32_t>();
        for (std::uint32_t i = 0; i < layers; ++i) {
            LayerSpec l;
            l.kind = static_cast<LayerKind>(r.get<std::uint8_t>());
            l.in_dim = r.get<std::uint32_t>();
            l.out_dim = r.get<std::uint32_t>();
            if (l.kind == LayerKind::dense) ++net.extractor_blocks_;
            net.extractor_.push_back(l);
        }
        const auto blob_size = r.get<std::uint64_t>();
        if (blob_size > bytes.size() - r.position()) throw FormatError("checkpoint: truncated parameters");
        net.params_ = ParameterSet<S>::deserialize(bytes.subspan(r.position(), blob_size));
        ByteReader rest(bytes.subspan(r.position() + blob_size));
        const auto heads = rest.get<std::uint32_t>();
        for (std::uint32_t i = 0; i < heads; ++i) {
            Head h;
            h.task_index = rest.get<std::int32_t>();
            h.block_index = rest.get<std::uint32_t>();
            h.class_labels.resize(rest.get<std::uint32_t>());
            for (int& c : h.class_labels) c = rest.get<std::int32_t>();
            if (h.block_index >= net.params_.num_blocks()) throw FormatError("checkpoint: head block out of range");
            net.heads_.push_back(std::move(h));
        }
        if (!rest.at_end()) throw FormatError("checkpoint: trailing bytes");
        return net;
    }

private:
    static constexpr std::uint32_t kCheckpointMagic = 0x43444C42;  // "BLDC"

    std::vector<LayerSpec> extractor_;
    std::size_t extractor_blocks_ = 0;
    ParameterSet<S> params_;
    std::vector<Head> heads_;
};

/// A mini-batch B of task t: images [|B| x input_dim] and one-hot labels
/// [|B| x |Y_t|] in the head's class order.
template <typename S>
struct Batch {
    Matrix<S> images;
    Matrix<S> labels;
    int task_index = 0;

    Eigen::Index size() const noexcept { return images.rows(); }

    void validate() const {
        if (images.rows() < 1) throw ArgumentError("Batch: empty");
        if (labels.rows() != images.rows()) throw ShapeError("Batch: label rows do not match images");
        for (Eigen::Index r = 0; r < labels.rows(); ++r) {
            if (std::abs(static_cast<double>(labels.row(r).sum()) - 1.0) > 1e-6) {
                throw ArgumentError("Batch: label row does not sum to 1");
            }
        }
    }
};

/// Ψ(images; θ).
template <typename S>
Matrix<S> extract_features(const MultiHeadNet<S>& net, const Matrix<S>& images) {
    if (images.cols() != static_cast<Eigen::Index>(net.input_dim())) {
        throw ShapeError("extract_features: input has " + std::to_string(images.cols()) +
                         " columns, extractor expects " + std::to_string(net.input_dim()));
    }
    Matrix<S> x = images;
    std::size_t dense = 0;
    for (std::size_t i = 0; i < net.extractor().size(); ++i) {
        if (net.extractor()[i].kind == LayerKind::dense) {
            const auto& blk = net.params().block(dense++);
            Matrix<S> y(x.rows(), blk.weight.cols());
            y.noalias() = x * blk.weight;
            y.rowwise() += blk.bias;
            x = std::move(y);
        } else {
            x = x.cwiseMax(S(0));
        }
    }
    require_finite(x, "extractor output");
    return x;
}

/// Raw logits of head φ_t on the given features.
template <typename S>
Matrix<S> head_logits(const MultiHeadNet<S>& net, int task_index, const Matrix<S>& features) {
    const auto& blk = net.params().block(net.head(task_index).block_index);
    if (features.cols() != blk.weight.rows()) throw ShapeError("head_logits: feature width mismatch");
    Matrix<S> z(features.rows(), blk.weight.cols());
    z.noalias() = features * blk.weight;
    z.rowwise() += blk.bias;
    return z;
}

/// φ_t(v, τ): softmax(logits / τ) row by row.
template <typename S>
Matrix<S> head_predict(const MultiHeadNet<S>& net, int task_index, const Matrix<S>& features, double tau) {
    return softmax_rows<S>(head_logits(net, task_index, features), tau);
}

}  // namespace bld
