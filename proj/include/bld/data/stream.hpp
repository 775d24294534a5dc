// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "bld/common/bytes.hpp"
#include "bld/common/errors.hpp"
#include "bld/common/random.hpp"
#include "bld/data/dataset.hpp"
#include "bld/data/splits.hpp"
#include "bld/model/multi_head_net.hpp"

namespace bld {

/// Rows of `ds` as a batch of `task`, labels one-hot in the task's class order.
template <typename S>
Batch<S> make_batch(const Dataset& ds, std::span<const std::size_t> indices, const TaskSpec& task) {
    Batch<S> b;
    b.task_index = task.task_index;
    b.images.resize(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(ds.dim()));
    b.labels = Matrix<S>::Zero(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(task.classes.size()));
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto i = static_cast<Eigen::Index>(indices[r]);
        b.images.row(static_cast<Eigen::Index>(r)) = ds.images.row(i).template cast<S>();
        const int label = ds.labels.at(indices[r]);
        const auto it = std::find(task.classes.begin(), task.classes.end(), label);
        if (it == task.classes.end()) throw ArgumentError("sample label is outside the task's class set");
        b.labels(static_cast<Eigen::Index>(r), it - task.classes.begin()) = S(1);
    }
    return b;
}

/// A whole task's training data, materialised. Holding one of these is what
/// makes a method violate the online constraint.
template <typename S>
struct TaskData {
    Batch<S> all;

    std::size_t payload_bytes() const noexcept {
        return static_cast<std::size_t>(all.images.size() + all.labels.size()) * sizeof(S);
    }
    std::vector<std::byte> serialize() const {
        ByteWriter w;
        w.put_all(std::span<const S>(all.images.data(), static_cast<std::size_t>(all.images.size())));
        w.put_all(std::span<const S>(all.labels.data(), static_cast<std::size_t>(all.labels.size())));
        return w.take();
    }
};

/// What a learner sees of one task.
template <typename S>
class TaskFeed {
public:
    virtual ~TaskFeed() = default;
    virtual const TaskSpec& task() const = 0;
    /// Next mini-batch, or nothing once the task's data is exhausted.
    virtual std::optional<Batch<S>> next_batch() = 0;
    /// Whole-task access; recorded, since it breaks the online setting.
    virtual TaskData<S> whole_task() = 0;
    virtual bool whole_task_requested() const = 0;
};

/// Single-pass stream over one task: sample order shuffled by seed, batches
/// drawn without replacement, final partial batch emitted.
template <typename S>
class TaskStream final : public TaskFeed<S> {
public:
    TaskStream(const Dataset& data, TaskSpec task, std::size_t batch_size, std::uint64_t seed)
        : data_(&data), task_(std::move(task)), batch_size_(batch_size), order_(task_.sample_indices) {
        if (batch_size_ == 0) throw ArgumentError("TaskStream: batch_size must be positive");
        if (order_.empty()) throw ArgumentError("TaskStream: task has no samples");
        Rng rng = make_rng(seed, 0x73747265616dULL + static_cast<std::uint64_t>(task_.task_index));
        shuffle(std::span<std::size_t>(order_), rng);
    }

    const TaskSpec& task() const override { return task_; }
    std::size_t batch_size() const noexcept { return batch_size_; }
    std::span<const std::size_t> order() const noexcept { return order_; }
    std::span<const std::size_t> emitted() const noexcept { return std::span(order_).first(cursor_); }

    std::optional<Batch<S>> next_batch() override {
        if (cursor_ >= order_.size()) return std::nullopt;
        const std::size_t n = std::min(batch_size_, order_.size() - cursor_);
        auto idx = std::span<const std::size_t>(order_).subspan(cursor_, n);
        cursor_ += n;
        return make_batch<S>(*data_, idx, task_);
    }

    TaskData<S> whole_task() override {
        whole_task_requested_ = true;
        return {make_batch<S>(*data_, order_, task_)};
    }

    bool whole_task_requested() const override { return whole_task_requested_; }

private:
    const Dataset* data_;
    TaskSpec task_;
    std::size_t batch_size_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    bool whole_task_requested_ = false;
};

}  // namespace bld
