// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

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

/// Plain fine-tuning: one or more cross-entropy steps per batch, nothing else.
struct FinetuneConfig {
    /// Learning rate of each SGD step taken on a batch, in order.
    std::vector<double> step_rates{1e-6, 1e-4, 1e-4};
    std::size_t batch_size = 20;
    AugmentConfig augment{};

    void validate() const {
        if (step_rates.empty()) throw ConfigError("finetune needs at least one step per batch");
        for (double a : step_rates) {
            if (!(a >= 0.0) || !std::isfinite(a)) throw ConfigError("finetune learning rates must be >= 0");
        }
        if (batch_size < 1) throw ConfigError("finetune batch_size must be >= 1");
        augment.validate();
    }

    std::string describe() const {
        std::ostringstream os;
        os.precision(17);
        os << "steps=";
        for (std::size_t i = 0; i < step_rates.size(); ++i) os << (i ? "," : "") << step_rates[i];
        os << " batch_size=" << batch_size << " transforms=" << augment.transforms;
        return os.str();
    }
};

/// Samples the batch's replicas once and takes one replica-averaged
/// cross-entropy step per entry of `step_rates`.
template <typename S>
void finetune_batch(MultiHeadNet<S>& net, const Batch<S>& batch, const FinetuneConfig& cfg, Rng& rng,
                    const BatchHooks<S>& hooks = {}) {
    cfg.validate();
    detail::check_batch_for(net, batch);
    const auto transforms = augment::sample_descriptors(cfg.augment.transforms, rng, cfg.augment.policy);
    auto transforms_handle = track_if(hooks.registry, state_names::transform_descriptors, StateScope::batch, transforms);
    if (hooks.mid_batch) hooks.mid_batch();
    for (double alpha : cfg.step_rates) {
        auto g = new_task_gradient(net, batch, transforms, cfg.augment.image_side);
        sgd_step(net.params(), g.grads, alpha);
    }
}

template <typename S>
class FinetuneLearner : public Learner<S> {
public:
    FinetuneLearner(MultiHeadNet<S> net, FinetuneConfig cfg, std::uint64_t seed)
        : Learner<S>(std::move(net), seed, cfg.describe()), cfg_(std::move(cfg)) {
        cfg_.validate();
    }

    std::string method() const override { return "finetune"; }

    void learn_task(TaskFeed<S>& feed) override {
        while (auto batch = feed.next_batch()) {
            finetune_batch(this->net(), *batch, cfg_, this->mutable_rng(), this->hooks());
            this->batch_boundary();
        }
    }

private:
    FinetuneConfig cfg_;
};

}  // namespace bld
