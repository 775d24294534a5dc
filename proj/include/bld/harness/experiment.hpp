// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "bld/audit/inventory.hpp"
#include "bld/audit/memory.hpp"
#include "bld/baselines/batch_l2.hpp"
#include "bld/baselines/finetune.hpp"
#include "bld/baselines/lwf.hpp"
#include "bld/common/errors.hpp"
#include "bld/common/random.hpp"
#include "bld/data/dataset.hpp"
#include "bld/data/splits.hpp"
#include "bld/data/stream.hpp"
#include "bld/engine/learner.hpp"
#include "bld/harness/config.hpp"
#include "bld/model/multi_head_net.hpp"

namespace bld::harness {

using Scalar = float;

/// Training and test data with their partition into tasks.
struct TaskSequence {
    std::shared_ptr<const Dataset> train;
    std::shared_ptr<const Dataset> test;
    std::vector<TaskSpec> train_tasks;
    std::vector<TaskSpec> test_tasks;
};

enum class FailureKind { none, config, constraint, numeric, other };

struct RunMetrics {
    std::string method;
    std::uint64_t seed = 0;
    std::vector<double> accuracy;  // final test accuracy (%) of T0..T{n-1}
    double average = 0.0;
    double wall_seconds = 0.0;
    audit::MemoryReport memory;
    FailureKind failure = FailureKind::none;
    std::string error;

    bool ok() const noexcept { return failure == FailureKind::none; }
};

/// Per-cell mean over the successful seeds of one method.
struct Aggregate {
    std::string method;
    std::size_t seeds = 0;
    std::vector<double> accuracy;
    double average = 0.0;
    double average_std = 0.0;  // sample standard deviation across seeds
    audit::MemoryReport memory;
};

/// Percentage of `test` samples of `task` classified correctly by the
/// task's own head.
template <typename S>
double evaluate(const MultiHeadNet<S>& net, const Dataset& test, const TaskSpec& task) {
    if (task.sample_indices.empty()) throw ArgumentError("evaluate: task has no test samples");
    const auto& head = net.head(task.task_index);
    std::size_t correct = 0;
    constexpr std::size_t chunk = 1000;
    for (std::size_t start = 0; start < task.sample_indices.size(); start += chunk) {
        const auto idx = std::span<const std::size_t>(task.sample_indices)
                             .subspan(start, std::min(chunk, task.sample_indices.size() - start));
        Matrix<S> x(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(test.dim()));
        for (std::size_t r = 0; r < idx.size(); ++r) {
            x.row(static_cast<Eigen::Index>(r)) = test.images.row(static_cast<Eigen::Index>(idx[r])).template cast<S>();
        }
        const Matrix<S> z = head_logits(net, task.task_index, extract_features(net, x));
        for (Eigen::Index r = 0; r < z.rows(); ++r) {
            Eigen::Index arg = 0;
            z.row(r).maxCoeff(&arg);
            if (head.label_at(static_cast<std::size_t>(arg)) == test.labels[idx[static_cast<std::size_t>(r)]]) ++correct;
        }
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(task.sample_indices.size());
}

/// Builds the train/test task sequence described by `cfg` for a seed.
inline TaskSequence prepare_tasks(const DataConfig& cfg, std::shared_ptr<const Dataset> train,
                                  std::shared_ptr<const Dataset> test, std::uint64_t seed) {
    TaskSequence out;
    const std::uint64_t split_seed = cfg.split_seed.value_or(seed);
    if (cfg.source == "synthetic") {
        auto syn = synthetic_tasks(cfg.n_tasks, cfg.synthetic_classes_per_task, cfg.synthetic_samples, cfg.synthetic_dim,
                                   cfg.synthetic_separation, split_seed);
        out.train = std::make_shared<const Dataset>(std::move(syn.train));
        out.test = std::make_shared<const Dataset>(std::move(syn.test));
        out.train_tasks = std::move(syn.train_tasks);
        out.test_tasks = std::move(syn.test_tasks);
    } else {
        if (train == nullptr || test == nullptr) throw ArgumentError("prepare_tasks: idx data not loaded");
        out.train = std::move(train);
        out.test = std::move(test);
        out.train_tasks = make_splits(out.train->labels, cfg.n_tasks, split_seed);
        out.test_tasks = assign_samples(out.test->labels, out.train_tasks);
    }
    if (cfg.max_train_per_task > 0) {
        for (auto& t : out.train_tasks) {
            if (t.sample_indices.size() <= cfg.max_train_per_task) continue;
            Rng rng = make_rng(split_seed, 0x63617000ULL + static_cast<std::uint64_t>(t.task_index));
            shuffle(std::span<std::size_t>(t.sample_indices), rng);
            t.sample_indices.resize(cfg.max_train_per_task);
            std::sort(t.sample_indices.begin(), t.sample_indices.end());
        }
    }
    return out;
}

using LearnerFactory =
    std::function<std::unique_ptr<Learner<Scalar>>(const ExperimentConfig&, MultiHeadNet<Scalar>, std::uint64_t seed)>;

/// The learner selected by `cfg.method`.
inline std::unique_ptr<Learner<Scalar>> make_learner(const ExperimentConfig& cfg, MultiHeadNet<Scalar> net,
                                                     std::uint64_t seed) {
    const auto& m = cfg.method;
    if (m == "bld" || m == "bld_no_balancing" || m == "bld_alternated") {
        return std::make_unique<BldLearner<Scalar>>(std::move(net), cfg.bld, seed);
    }
    if (m == "finetune") return std::make_unique<FinetuneLearner<Scalar>>(std::move(net), cfg.finetune, seed);
    if (m == "batch_l2") return std::make_unique<BatchL2Learner<Scalar>>(std::move(net), cfg.batch_l2, seed);
    if (m == "lwf_single_pass" || m == "lwf_offline") {
        return std::make_unique<LwfLearner<Scalar>>(std::move(net), cfg.lwf, seed);
    }
    throw ConfigError("unknown method '" + m + "'");
}

/// Auxiliary bytes a learner actually held, from the peaks of its registry.
template <typename S>
audit::MemoryReport measured_overhead(const Learner<S>& learner) {
    audit::MemoryReport r;
    r.method = learner.method();
    r.intra_batch_bytes = learner.peak_of(state_names::probability_bank) + learner.peak_of(state_names::parameter_snapshot) +
                          learner.peak_of(state_names::task_prediction_store);
    r.descriptor_bytes = learner.peak_of(state_names::transform_descriptors);
    r.norm_bytes = learner.peak_of(state_names::warmup_grad_norms);
    for (const auto& [name, bytes] : learner.boundary_peak_bytes()) {
        if (name == state_names::task_data) continue;
        r.inter_batch_bytes += bytes;
    }
    r.data_storage_bytes = learner.peak_of(state_names::task_data);
    r.constraint1_violated = r.inter_batch_bytes > 0 || r.data_storage_bytes > 0;
    r.constraint2_violated = learner.peak_of(state_names::parameter_snapshot) > 0;
    return r;
}

/// Extractor spec of the configured MLP for inputs of `input_dim`.
inline std::vector<LayerSpec> extractor_spec(const ExperimentConfig& cfg, std::size_t input_dim) {
    return mlp_spec(input_dim, cfg.hidden);
}

struct SeedHooks {
    std::function<void(const Learner<Scalar>&)> after_task;
    std::function<void(const BatchDiagnostics&)> diagnostics;
};

/// One seed: spawn a head per task, train on its stream, then evaluate every
/// task under its own head.
inline RunMetrics run_seed(const ExperimentConfig& cfg, const TaskSequence& data, std::uint64_t seed,
                           const LearnerFactory& factory = make_learner, const SeedHooks& hooks = {}) {
    RunMetrics m;
    m.method = cfg.method;
    m.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        ExperimentConfig run_cfg = cfg;
        run_cfg.bld.augment.image_side = data.train->image_side;
        run_cfg.finetune.augment.image_side = data.train->image_side;
        run_cfg.batch_l2.augment.image_side = data.train->image_side;
        Rng init = make_rng(seed, 0x696e6974ULL);
        MultiHeadNet<Scalar> net(extractor_spec(run_cfg, data.train->dim()), init);
        auto learner = factory(run_cfg, std::move(net), seed);
        if (run_cfg.audit_boundaries) {
            learner->on_batch_boundary([](const Learner<Scalar>& l) { (void)audit::inter_batch_inventory(l); });
        }
        if (hooks.diagnostics) learner->on_diagnostics(hooks.diagnostics);
        for (const auto& task : data.train_tasks) {
            learner->begin_task(task);
            TaskStream<Scalar> stream(*data.train, task, run_cfg.bld.batch_size, seed);
            learner->learn_task(stream);
            if (hooks.after_task) hooks.after_task(*learner);
        }
        m.method = learner->method();
        for (const auto& task : data.test_tasks) m.accuracy.push_back(evaluate(learner->net(), *data.test, task));
        m.average = std::accumulate(m.accuracy.begin(), m.accuracy.end(), 0.0) / static_cast<double>(m.accuracy.size());
        m.memory = measured_overhead(*learner);
    } catch (const ConstraintViolation& e) {
        m.failure = FailureKind::constraint;
        m.error = e.what();
    } catch (const NumericError& e) {
        m.failure = FailureKind::numeric;
        m.error = e.what();
    } catch (const ConfigError& e) {
        m.failure = FailureKind::config;
        m.error = e.what();
    } catch (const std::exception& e) {
        m.failure = FailureKind::other;
        m.error = e.what();
    }
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return m;
}

inline Aggregate aggregate(std::span<const RunMetrics> runs) {
    Aggregate a;
    std::vector<const RunMetrics*> ok;
    for (const auto& r : runs) {
        if (r.ok()) ok.push_back(&r);
    }
    if (!runs.empty()) a.method = runs.front().method;
    a.seeds = ok.size();
    if (ok.empty()) return a;
    a.memory = ok.front()->memory;
    a.accuracy.assign(ok.front()->accuracy.size(), 0.0);
    for (const auto* r : ok) {
        for (std::size_t i = 0; i < a.accuracy.size(); ++i) a.accuracy[i] += r->accuracy.at(i);
        a.average += r->average;
    }
    for (auto& v : a.accuracy) v /= static_cast<double>(ok.size());
    a.average /= static_cast<double>(ok.size());
    if (ok.size() > 1) {
        double ss = 0.0;
        for (const auto* r : ok) ss += (r->average - a.average) * (r->average - a.average);
        a.average_std = std::sqrt(ss / static_cast<double>(ok.size() - 1));
    }
    return a;
}

struct ExperimentResult {
    std::vector<RunMetrics> runs;
    Aggregate summary;
};

/// Every seed of `cfg`. IDX files are read once and shared across seeds.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const LearnerFactory& factory = make_learner,
                                       const SeedHooks& hooks = {}) {
    cfg.validate();
    cfg.require_inputs();
    std::shared_ptr<const Dataset> train, test;
    if (cfg.data.source == "idx") {
        train = std::make_shared<const Dataset>(load_idx(cfg.data.train_images, cfg.data.train_labels));
        test = std::make_shared<const Dataset>(load_idx(cfg.data.test_images, cfg.data.test_labels));
    }
    ExperimentResult out;
    for (auto seed : cfg.seeds) {
        const TaskSequence data = prepare_tasks(cfg.data, train, test, seed);
        out.runs.push_back(run_seed(cfg, data, seed, factory, hooks));
    }
    out.summary = aggregate(out.runs);
    return out;
}

}  // namespace bld::harness
