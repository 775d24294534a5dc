// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>

#include "bld/audit/state_registry.hpp"
#include "bld/augment/transforms.hpp"
#include "bld/common/errors.hpp"
#include "bld/common/random.hpp"
#include "bld/engine/bld.hpp"
#include "bld/engine/learner.hpp"
#include "bld/engine/replicas.hpp"
#include "bld/model/multi_head_net.hpp"
#include "bld/nn/parameters.hpp"

namespace bld {

/// Batch-level L2: snapshot θ at the start of the batch, then pull the
/// updated parameters back towards it while learning the batch.
struct BatchL2Config {
    double alpha_w = 1e-6;
    double alpha_j = 1e-4;
    std::size_t joint_iterations = 2;
    double l2_weight = 1.0;
    std::size_t batch_size = 20;
    AugmentConfig augment{};

    void validate() const {
        if (!(alpha_w >= 0.0) || !(alpha_j >= 0.0)) throw ConfigError("batch_l2 learning rates must be >= 0");
        if (!(l2_weight >= 0.0) || !std::isfinite(l2_weight)) throw ConfigError("batch_l2 l2_weight must be >= 0");
        if (joint_iterations < 1) throw ConfigError("batch_l2 joint_iterations must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_l2 batch_size must be >= 1");
        augment.validate();
    }

    std::string describe() const {
        std::ostringstream os;
        os.precision(17);
        os << "alpha_w=" << alpha_w << " alpha_j=" << alpha_j << " joint_iterations=" << joint_iterations
           << " l2_weight=" << l2_weight << " batch_size=" << batch_size << " transforms=" << augment.transforms;
        return os.str();
    }
};

template <typename S>
struct L2Penalty {
    double value = 0.0;
    GradientSet<S> grads;
};

/// w·||θ − θ_s||² and its gradient 2w(θ − θ_s).
template <typename S>
L2Penalty<S> l2_penalty(const ParameterSet<S>& theta, const ParameterSet<S>& anchor, double weight) {
    if (!theta.same_shape(anchor)) throw ShapeError("l2_penalty: parameter sets differ in shape");
    L2Penalty<S> out{0.0, GradientSet<S>::zeros_like(theta)};
    const S two_w = static_cast<S>(2.0 * weight);
    for (std::size_t i = 0; i < theta.num_blocks(); ++i) {
        const auto& p = theta.block(i);
        const auto& a = anchor.block(i);
        auto& g = out.grads.block(i);
        g.weight = two_w * (p.weight - a.weight);
        g.bias = two_w * (p.bias - a.bias);
        out.value += (p.weight - a.weight).template cast<double>().squaredNorm();
        out.value += (p.bias - a.bias).template cast<double>().squaredNorm();
    }
    out.value *= weight;
    return out;
}

/// One batch: warm-up cross-entropy step with α_w, then J steps with α_j on
/// cross-entropy plus the L2 pull towards the batch-start snapshot.
template <typename S>
void l2_batch(MultiHeadNet<S>& net, const Batch<S>& batch, const BatchL2Config& cfg, Rng& rng,
              const BatchHooks<S>& hooks = {}) {
    cfg.validate();
    detail::check_batch_for(net, batch);
    const ParameterSet<S> snapshot = net.params();
    auto snapshot_handle = track_if(hooks.registry, state_names::parameter_snapshot, StateScope::batch, snapshot);
    const auto transforms = augment::sample_descriptors(cfg.augment.transforms, rng, cfg.augment.policy);
    auto transforms_handle = track_if(hooks.registry, state_names::transform_descriptors, StateScope::batch, transforms);

    auto gw = new_task_gradient(net, batch, transforms, cfg.augment.image_side);
    sgd_step(net.params(), gw.grads, cfg.alpha_w);
    if (hooks.mid_batch) hooks.mid_batch();

    for (std::size_t j = 0; j < cfg.joint_iterations; ++j) {
        auto g = new_task_gradient(net, batch, transforms, cfg.augment.image_side);
        g.grads.accumulate(l2_penalty(net.params(), snapshot, cfg.l2_weight).grads);
        sgd_step(net.params(), g.grads, cfg.alpha_j);
    }
}

template <typename S>
class BatchL2Learner : public Learner<S> {
public:
    BatchL2Learner(MultiHeadNet<S> net, BatchL2Config cfg, std::uint64_t seed)
        : Learner<S>(std::move(net), seed, cfg.describe()), cfg_(std::move(cfg)) {
        cfg_.validate();
    }

    std::string method() const override { return "batch_l2"; }

    void learn_task(TaskFeed<S>& feed) override {
        while (auto batch = feed.next_batch()) {
            l2_batch(this->net(), *batch, cfg_, this->mutable_rng(), this->hooks());
            this->batch_boundary();
        }
    }

private:
    BatchL2Config cfg_;
};

}  // namespace bld
