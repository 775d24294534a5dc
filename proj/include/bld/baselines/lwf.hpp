// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bld/audit/state_registry.hpp"
#include "bld/common/bytes.hpp"
#include "bld/common/errors.hpp"
#include "bld/common/random.hpp"
#include "bld/data/stream.hpp"
#include "bld/engine/bld.hpp"
#include "bld/engine/learner.hpp"
#include "bld/model/multi_head_net.hpp"
#include "bld/nn/backprop.hpp"
#include "bld/nn/parameters.hpp"

namespace bld {

/// Learning without Forgetting, in its single-pass and multi-epoch forms.
/// Both record the old heads' predictions on the whole task before training.
struct LwfConfig {
    double learning_rate = 1e-4;
    double tau = 2.0;
    double distill_weight = 1.0;
    std::size_t batch_size = 20;
    std::size_t epochs = 1;
    bool shuffle = false;  // i.i.d. reshuffle every epoch (offline only)
    bool offline = false;

    void validate() const {
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("lwf learning_rate must be >= 0");
        if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("lwf tau must be > 0");
        if (!(distill_weight >= 0.0)) throw ConfigError("lwf distill_weight must be >= 0");
        if (batch_size < 1) throw ConfigError("lwf batch_size must be >= 1");
        if (epochs < 1) throw ConfigError("lwf epochs must be >= 1");
    }

    std::string describe() const {
        std::ostringstream os;
        os.precision(17);
        os << "learning_rate=" << learning_rate << " tau=" << tau << " distill_weight=" << distill_weight
           << " batch_size=" << batch_size << " epochs=" << epochs << " shuffle=" << shuffle
           << " offline=" << offline;
        return os.str();
    }
};

/// Old-head soft predictions for every sample of a task, recorded at the
/// parameters held when the task began.
template <typename S>
struct PredictionStore {
    std::vector<int> tasks;
    std::vector<Matrix<S>> predictions;  // one [N x |Y_o|] matrix per old task

    std::size_t payload_bytes() const noexcept {
        std::size_t n = 0;
        for (const auto& p : predictions) n += static_cast<std::size_t>(p.size()) * sizeof(S);
        return n;
    }
    std::vector<std::byte> serialize() const {
        ByteWriter w;
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            w.put(static_cast<std::int32_t>(tasks[i]));
            w.put_all(std::span<const S>(predictions[i].data(), static_cast<std::size_t>(predictions[i].size())));
        }
        return w.take();
    }
};

/// Callbacks of the LwF loops; every member is optional.
template <typename S>
struct LwfHooks {
    StateRegistry* registry = nullptr;
    std::function<void()> mid_batch;
    std::function<void()> batch_end;
};

namespace detail {

inline constexpr Eigen::Index kRecordChunk = 1000;

template <typename S>
PredictionStore<S> record_predictions(const MultiHeadNet<S>& net, const Batch<S>& all, double tau) {
    PredictionStore<S> store;
    store.tasks = old_tasks(net.heads(), all.task_index);
    if (store.tasks.empty()) return store;
    const Eigen::Index n = all.size();
    for (int o : store.tasks) store.predictions.emplace_back(n, static_cast<Eigen::Index>(net.head(o).num_classes()));
    for (Eigen::Index r0 = 0; r0 < n; r0 += kRecordChunk) {
        const Eigen::Index rows = std::min(kRecordChunk, n - r0);
        const ForwardPass<S> fp = forward(net, Matrix<S>(all.images.middleRows(r0, rows)), store.tasks);
        for (std::size_t slot = 0; slot < store.tasks.size(); ++slot) {
            store.predictions[slot].middleRows(r0, rows) = softmax_rows<S>(fp.logits_of(store.tasks[slot]), tau);
        }
    }
    return store;
}

template <typename S>
Matrix<S> gather_rows(const Matrix<S>& m, std::span<const std::size_t> rows) {
    Matrix<S> out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

/// One SGD step on cross-entropy plus weighted distillation over `rows`.
template <typename S>
void lwf_step(MultiHeadNet<S>& net, const Batch<S>& all, const PredictionStore<S>& store,
              std::span<const std::size_t> rows, const LwfConfig& cfg) {
    LossSpec<S> loss;
    loss.terms.push_back({all.task_index, gather_rows(all.labels, rows), 1.0, 1.0});
    for (std::size_t slot = 0; slot < store.tasks.size(); ++slot) {
        loss.terms.push_back({store.tasks[slot], gather_rows(store.predictions[slot], rows), cfg.tau, cfg.distill_weight});
    }
    const auto r = forward_backward(net, gather_rows(all.images, rows), loss);
    sgd_step(net.params(), r.grads, cfg.learning_rate);
}

template <typename S>
void check_task_data(const MultiHeadNet<S>& net, const Batch<S>& all) {
    if (!net.has_head(all.task_index)) throw ArgumentError("no head for task " + std::to_string(all.task_index));
    all.validate();
}

}  // namespace detail

/// Single pass over the task in the order given, after recording the old
/// heads' predictions for all of it.
template <typename S>
void lwf_single_pass_task(MultiHeadNet<S>& net, const TaskData<S>& data, const LwfConfig& cfg,
                          const LwfHooks<S>& hooks = {}) {
    cfg.validate();
    detail::check_task_data(net, data.all);
    const PredictionStore<S> store = detail::record_predictions(net, data.all, cfg.tau);
    auto store_handle = track_if(hooks.registry, state_names::task_prediction_store, StateScope::task, store);
    const auto n = static_cast<std::size_t>(data.all.size());
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
        rows.resize(std::min(cfg.batch_size, n - start));
        std::iota(rows.begin(), rows.end(), start);
        if (hooks.mid_batch) hooks.mid_batch();
        detail::lwf_step(net, data.all, store, rows, cfg);
        if (hooks.batch_end) hooks.batch_end();
    }
}

/// Multi-epoch LwF. With `shuffle` every epoch visits the task in a fresh
/// random order drawn from `rng`; otherwise in the order given.
template <typename S>
void lwf_offline(MultiHeadNet<S>& net, const TaskData<S>& data, const LwfConfig& cfg, Rng& rng,
                 const LwfHooks<S>& hooks = {}) {
    cfg.validate();
    detail::check_task_data(net, data.all);
    const PredictionStore<S> store = detail::record_predictions(net, data.all, cfg.tau);
    auto store_handle = track_if(hooks.registry, state_names::task_prediction_store, StateScope::task, store);
    std::vector<std::size_t> order(static_cast<std::size_t>(data.all.size()));
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        if (cfg.shuffle) shuffle(std::span<std::size_t>(order), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const auto rows = std::span<const std::size_t>(order).subspan(start, std::min(cfg.batch_size, order.size() - start));
            if (hooks.mid_batch) hooks.mid_batch();
            detail::lwf_step(net, data.all, store, rows, cfg);
            if (hooks.batch_end) hooks.batch_end();
        }
    }
}

template <typename S>
class LwfLearner : public Learner<S> {
public:
    LwfLearner(MultiHeadNet<S> net, LwfConfig cfg, std::uint64_t seed)
        : Learner<S>(std::move(net), seed, cfg.describe()), cfg_(std::move(cfg)) {
        cfg_.validate();
    }

    std::string method() const override { return cfg_.offline ? "lwf_offline" : "lwf_single_pass"; }
    bool declares_task_storage() const override { return true; }
    const LwfConfig& config() const noexcept { return cfg_; }

    void learn_task(TaskFeed<S>& feed) override {
        const TaskData<S> data = feed.whole_task();
        auto data_handle = this->mutable_registry().track(state_names::task_data, StateScope::task, data);
        LwfHooks<S> hooks;
        hooks.registry = &this->mutable_registry();
        hooks.mid_batch = [this] { this->mid_batch(); };
        hooks.batch_end = [this] { this->batch_boundary(); };
        if (cfg_.offline) {
            lwf_offline(this->net(), data, cfg_, this->mutable_rng(), hooks);
        } else {
            lwf_single_pass_task(this->net(), data, cfg_, hooks);
        }
    }

private:
    LwfConfig cfg_;
};

}  // namespace bld
