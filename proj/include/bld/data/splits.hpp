// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "bld/common/errors.hpp"
#include "bld/common/random.hpp"
#include "bld/data/dataset.hpp"

namespace bld {

/// One task of the stream: its class set (in head output order) and the
/// indices of its samples in the dataset.
struct TaskSpec {
    int task_index = 0;
    std::vector<int> classes;
    std::vector<std::size_t> sample_indices;

    friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

/// Samples of `labels` belonging to each task's class set.
inline std::vector<TaskSpec> assign_samples(std::span<const int> labels, std::vector<TaskSpec> tasks) {
    for (auto& t : tasks) {
        t.sample_indices.clear();
        const std::set<int> cls(t.classes.begin(), t.classes.end());
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (cls.count(labels[i]) != 0) t.sample_indices.push_back(i);
        }
    }
    return tasks;
}

/// Random partition of the label set into `n_tasks` disjoint, equally sized
/// class subsets. Each task lists its classes in ascending order.
inline std::vector<TaskSpec> make_splits(std::span<const int> labels, std::size_t n_tasks, std::uint64_t seed) {
    if (n_tasks == 0) throw ArgumentError("make_splits: n_tasks must be positive");
    const std::set<int> unique(labels.begin(), labels.end());
    std::vector<int> classes(unique.begin(), unique.end());
    if (classes.empty() || classes.size() % n_tasks != 0) {
        throw ArgumentError("make_splits: " + std::to_string(classes.size()) + " classes cannot be split into " +
                            std::to_string(n_tasks) + " equal tasks");
    }
    Rng rng = make_rng(seed, 0x73706c6974ULL);
    shuffle(std::span<int>(classes), rng);
    const std::size_t per = classes.size() / n_tasks;
    std::vector<TaskSpec> tasks(n_tasks);
    for (std::size_t t = 0; t < n_tasks; ++t) {
        tasks[t].task_index = static_cast<int>(t) + 1;
        tasks[t].classes.assign(classes.begin() + static_cast<std::ptrdiff_t>(t * per),
                                classes.begin() + static_cast<std::ptrdiff_t>((t + 1) * per));
        std::sort(tasks[t].classes.begin(), tasks[t].classes.end());
    }
    return assign_samples(labels, std::move(tasks));
}

struct SyntheticData {
    Dataset train;
    Dataset test;
    std::vector<TaskSpec> train_tasks;
    std::vector<TaskSpec> test_tasks;
    std::vector<std::vector<double>> means;
};

/// Isotropic unit-variance Gaussian blobs, one per class, with every pair of
/// class means at least `separation` apart. Per class, the last 20% of the
/// `samples` draws are held out as the test set. Classes are assigned to tasks
/// in order (task t owns classes [(t-1)·c, t·c)).
inline SyntheticData synthetic_tasks(std::size_t n_tasks, std::size_t classes_per_task, std::size_t samples,
                                     std::size_t dim, double separation, std::uint64_t seed) {
    if (samples == 0) throw ArgumentError("synthetic_tasks: empty task (samples = 0)");
    if (n_tasks == 0 || classes_per_task < 2 || dim == 0) throw ArgumentError("synthetic_tasks: bad shape");
    if (!(separation > 0.0)) throw ArgumentError("synthetic_tasks: separation must be positive");
    const std::size_t n_classes = n_tasks * classes_per_task;
    Rng rng = make_rng(seed, 0x73796e7468ULL);

    SyntheticData out;
    out.means.assign(n_classes, std::vector<double>(dim));
    for (auto& m : out.means) {
        for (auto& x : m) x = normal(rng);
    }
    double min_dist = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < n_classes; ++a) {
        for (std::size_t b = a + 1; b < n_classes; ++b) {
            double d2 = 0.0;
            for (std::size_t i = 0; i < dim; ++i) d2 += std::pow(out.means[a][i] - out.means[b][i], 2);
            min_dist = std::min(min_dist, std::sqrt(d2));
        }
    }
    if (!(min_dist > 0.0)) throw ArgumentError("synthetic_tasks: degenerate class means");
    // Scale a hair above the target so rounding cannot leave a pair short.
    const double scale = separation / min_dist * (1.0 + 1e-9);
    for (auto& m : out.means) {
        for (auto& x : m) x *= scale;
    }

    const std::size_t n_test = samples / 5;
    const std::size_t n_train = samples - n_test;
    out.train.images.resize(static_cast<Eigen::Index>(n_classes * n_train), static_cast<Eigen::Index>(dim));
    out.test.images.resize(static_cast<Eigen::Index>(n_classes * n_test), static_cast<Eigen::Index>(dim));
    Eigen::Index tr = 0;
    Eigen::Index te = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        for (std::size_t s = 0; s < samples; ++s) {
            const bool is_test = s >= n_train;
            auto& m = is_test ? out.test.images : out.train.images;
            const Eigen::Index row = is_test ? te++ : tr++;
            for (std::size_t i = 0; i < dim; ++i) {
                m(row, static_cast<Eigen::Index>(i)) = static_cast<float>(out.means[c][i] + normal(rng));
            }
            (is_test ? out.test.labels : out.train.labels).push_back(static_cast<int>(c));
        }
    }

    std::vector<TaskSpec> tasks(n_tasks);
    for (std::size_t t = 0; t < n_tasks; ++t) {
        tasks[t].task_index = static_cast<int>(t) + 1;
        for (std::size_t c = 0; c < classes_per_task; ++c) {
            tasks[t].classes.push_back(static_cast<int>(t * classes_per_task + c));
        }
    }
    out.train_tasks = assign_samples(out.train.labels, tasks);
    out.test_tasks = assign_samples(out.test.labels, tasks);
    return out;
}

}  // namespace bld
