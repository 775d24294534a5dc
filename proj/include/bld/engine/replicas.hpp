// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "bld/augment/transforms.hpp"
#include "bld/common/errors.hpp"
#include "bld/model/multi_head_net.hpp"
#include "bld/nn/backprop.hpp"
#include "bld/nn/parameters.hpp"

namespace bld {

/// How a batch is expanded into augmented replicas.
struct AugmentConfig {
    std::size_t transforms = 50;  // K, replica 0 is the identity
    std::size_t image_side = 0;   // 0 for non-image inputs
    augment::AugmentPolicy policy = augment::AugmentPolicy::digits();

    void validate() const {
        if (transforms < 1) throw ConfigError("transforms must be >= 1");
    }
};

template <typename S>
struct ReplicaMean {
    double loss = 0.0;
    GradientSet<S> grads;
};

/// Gradients of several losses averaged over the replicas of one batch.
///
/// For every replica k (in order) the transformed batch is regenerated from
/// its descriptor, one forward pass is run over `heads`, `on_forward(k, fp)`
/// observes it, and each loss `make_loss(i, k)` is backpropagated. Per-loss
/// gradients are summed in replica order and scaled by 1/K at the end. A
/// loss with no terms yields a zero gradient without a backward pass.
template <typename S, typename MakeLoss, typename OnForward>
std::vector<ReplicaMean<S>> replica_means(const MultiHeadNet<S>& net, const Batch<S>& batch,
                                          const augment::TransformSet& transforms, std::size_t image_side,
                                          std::span<const int> heads, std::size_t num_losses, MakeLoss&& make_loss,
                                          OnForward&& on_forward) {
    if (transforms.size() < 1) throw ArgumentError("replica_means: empty transform set");
    std::vector<ReplicaMean<S>> out(num_losses);
    for (auto& m : out) m.grads = GradientSet<S>::zeros_like(net.params());
    for (std::size_t k = 0; k < transforms.size(); ++k) {
        const Matrix<S> x = augment::apply_batch<S>(batch.images, image_side, transforms.descriptors[k]);
        const ForwardPass<S> fp = forward(net, x, heads);
        on_forward(k, fp);
        for (std::size_t i = 0; i < num_losses; ++i) {
            const LossSpec<S> loss = make_loss(i, k);
            if (loss.terms.empty()) continue;
            auto r = backward(net, fp, loss);
            out[i].loss += r.loss;
            out[i].grads.accumulate(r.grads);
        }
    }
    const double inv = 1.0 / static_cast<double>(transforms.size());
    for (auto& m : out) {
        m.loss *= inv;
        m.grads.scale(static_cast<S>(inv));
    }
    return out;
}

/// Cross-entropy (τ = 1) of the batch labels under the batch's own head.
template <typename S>
LossSpec<S> new_task_loss(const Batch<S>& batch) {
    return {{LossTerm<S>{batch.task_index, batch.labels, 1.0, 1.0}}};
}

/// Replica-mean gradient of the new-task cross-entropy.
template <typename S>
ReplicaMean<S> new_task_gradient(const MultiHeadNet<S>& net, const Batch<S>& batch,
                                 const augment::TransformSet& transforms, std::size_t image_side) {
    const int heads[] = {batch.task_index};
    auto r = replica_means<S>(
        net, batch, transforms, image_side, heads, 1, [&](std::size_t, std::size_t) { return new_task_loss(batch); },
        [](std::size_t, const ForwardPass<S>&) {});
    return std::move(r.front());
}

}  // namespace bld
