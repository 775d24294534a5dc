// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bld/audit/state_registry.hpp"
#include "bld/common/random.hpp"
#include "bld/data/splits.hpp"
#include "bld/data/stream.hpp"
#include "bld/engine/bld.hpp"
#include "bld/model/multi_head_net.hpp"

namespace bld {

/// Serialisable view of the random engine cursor.
struct RngState {
    const Rng* rng = nullptr;

    std::vector<std::byte> serialize() const {
        std::ostringstream os;
        os << *rng;
        const auto s = os.str();
        const auto* p = reinterpret_cast<const std::byte*>(s.data());
        return {p, p + s.size()};
    }
    std::size_t payload_bytes() const { return serialize().size(); }
};

struct ConfigState {
    std::string text;

    std::vector<std::byte> serialize() const {
        const auto* p = reinterpret_cast<const std::byte*>(text.data());
        return {p, p + text.size()};
    }
    std::size_t payload_bytes() const noexcept { return text.size(); }
};

/// A continual learner: a multi-head network, its random cursor and static
/// config, plus whatever a method allocates while it works. Everything it
/// holds is declared in its StateRegistry.
template <typename S>
class Learner {
public:
    using Hook = std::function<void(const Learner&)>;

    Learner(MultiHeadNet<S> net, std::uint64_t seed, std::string config_text)
        : net_(std::move(net)), rng_(make_rng(seed, 0x6c6561726e6572ULL)), config_{std::move(config_text)},
          rng_state_{&rng_} {
        persistent_.push_back(registry_.track(state_names::parameters, StateScope::parameters, net_.params()));
        persistent_.push_back(registry_.track(state_names::config, StateScope::config, config_));
        persistent_.push_back(registry_.track(state_names::rng, StateScope::rng, rng_state_));
    }

    Learner(const Learner&) = delete;
    Learner& operator=(const Learner&) = delete;
    virtual ~Learner() = default;

    virtual std::string method() const = 0;

    /// True for methods that knowingly keep task-wide state between batches.
    virtual bool declares_task_storage() const { return false; }

    /// Task boundary: instantiate the new head.
    void begin_task(const TaskSpec& task) { net_.spawn_head(task.task_index, task.classes, rng_); }

    virtual void learn_task(TaskFeed<S>& feed) = 0;

    const MultiHeadNet<S>& net() const noexcept { return net_; }
    MultiHeadNet<S>& net() noexcept { return net_; }
    const StateRegistry& registry() const noexcept { return registry_; }
    const Rng& rng() const noexcept { return rng_; }

    void on_batch_boundary(Hook hook) { boundary_hook_ = std::move(hook); }
    void on_mid_batch(Hook hook) { mid_hook_ = std::move(hook); }
    void on_diagnostics(std::function<void(const BatchDiagnostics&)> sink) { diagnostics_ = std::move(sink); }

    /// Largest payload observed per registered object name, sampled at every
    /// mid-batch and batch-boundary point.
    const std::map<std::string, std::size_t>& peak_bytes() const noexcept { return peaks_; }
    std::size_t peak_of(const std::string& name) const {
        const auto it = peaks_.find(name);
        return it == peaks_.end() ? 0 : it->second;
    }
    /// Largest payload per object name observed at batch boundaries only.
    const std::map<std::string, std::size_t>& boundary_peak_bytes() const noexcept { return boundary_peaks_; }
    std::size_t boundary_peak_of(const std::string& name) const {
        const auto it = boundary_peaks_.find(name);
        return it == boundary_peaks_.end() ? 0 : it->second;
    }

protected:
    Rng& mutable_rng() noexcept { return rng_; }
    StateRegistry& mutable_registry() noexcept { return registry_; }

    BatchHooks<S> hooks() {
        BatchHooks<S> h;
        h.registry = &registry_;
        h.mid_batch = [this] { mid_batch(); };
        h.diagnostics = diagnostics_;
        return h;
    }

    void batch_boundary() {
        sample_peaks(peaks_);
        sample_peaks(boundary_peaks_);
        if (boundary_hook_) boundary_hook_(*this);
    }

    void mid_batch() {
        sample_peaks(peaks_);
        if (mid_hook_) mid_hook_(*this);
    }

private:
    void sample_peaks(std::map<std::string, std::size_t>& into) const {
        for (const auto& e : registry_.entries()) {
            if (e.scope == StateScope::batch || e.scope == StateScope::task) {
                auto& p = into[e.name];
                p = std::max(p, e.payload_bytes());
            }
        }
    }

    MultiHeadNet<S> net_;
    Rng rng_;
    ConfigState config_;
    RngState rng_state_;
    StateRegistry registry_;
    std::vector<StateRegistry::Handle> persistent_;
    Hook boundary_hook_;
    Hook mid_hook_;
    std::function<void(const BatchDiagnostics&)> diagnostics_;
    std::map<std::string, std::size_t> peaks_;
    std::map<std::string, std::size_t> boundary_peaks_;
};

/// Batch-level Distillation over an online task stream.
template <typename S>
class BldLearner : public Learner<S> {
public:
    BldLearner(MultiHeadNet<S> net, BldConfig cfg, std::uint64_t seed)
        : Learner<S>(std::move(net), seed, cfg.describe()), cfg_(std::move(cfg)) {
        cfg_.validate();
    }

    std::string method() const override {
        switch (cfg_.mode) {
            case BldMode::full: return "bld";
            case BldMode::no_balancing: return "bld_no_balancing";
            case BldMode::alternated: return "bld_alternated";
        }
        return "bld";
    }

    const BldConfig& config() const noexcept { return cfg_; }

    void learn_task(TaskFeed<S>& feed) override {
        while (auto batch = feed.next_batch()) {
            process(*batch);
            this->batch_boundary();
        }
    }

    /// One batch; exposed so tests can drive the learner directly.
    virtual void process(const Batch<S>& batch) {
        process_batch(this->net(), batch, cfg_, this->mutable_rng(), this->hooks());
    }

protected:
    BldConfig cfg_;
};

}  // namespace bld
