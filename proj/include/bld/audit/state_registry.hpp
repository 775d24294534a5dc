// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace bld {

/// Lifetime class of a piece of engine state.
enum class StateScope : std::uint8_t {
    parameters,  // θ: extractor and heads
    config,      // static hyper-parameters
    rng,         // random engine cursor
    batch,       // must be released before the next batch
    task,        // kept across the batches of one task
};

inline const char* to_string(StateScope s) {
    switch (s) {
        case StateScope::parameters: return "parameters";
        case StateScope::config: return "config";
        case StateScope::rng: return "rng";
        case StateScope::batch: return "batch";
        case StateScope::task: return "task";
    }
    return "unknown";
}

/// Names under which the learners register their objects.
namespace state_names {
inline constexpr const char* parameters = "parameters";
inline constexpr const char* config = "config";
inline constexpr const char* rng = "rng";
inline constexpr const char* probability_bank = "probability_bank";
inline constexpr const char* transform_descriptors = "transform_descriptors";
inline constexpr const char* warmup_grad_norms = "warmup_grad_norms";
inline constexpr const char* parameter_snapshot = "parameter_snapshot";
inline constexpr const char* task_prediction_store = "task_prediction_store";
inline constexpr const char* task_data = "task_data";
}  // namespace state_names

struct StateEntry {
    std::uint64_t id = 0;
    std::string name;
    StateScope scope = StateScope::batch;
    std::function<std::size_t()> payload_bytes;
    std::function<std::vector<std::byte>()> serialize;
};

/// Every live object a learner allocates is declared here for as long as it
/// exists. Registrations are RAII handles, so an object that outlives its
/// intended scope stays visible to the audit.
class StateRegistry {
public:
    class Handle {
    public:
        Handle() = default;
        Handle(StateRegistry* registry, std::uint64_t id) : registry_(registry), id_(id) {}
        Handle(Handle&& other) noexcept : registry_(std::exchange(other.registry_, nullptr)), id_(other.id_) {}
        Handle& operator=(Handle&& other) noexcept {
            if (this != &other) {
                release();
                registry_ = std::exchange(other.registry_, nullptr);
                id_ = other.id_;
            }
            return *this;
        }
        Handle(const Handle&) = delete;
        Handle& operator=(const Handle&) = delete;
        ~Handle() { release(); }

        void release() {
            if (registry_ != nullptr) registry_->remove(id_);
            registry_ = nullptr;
        }

    private:
        StateRegistry* registry_ = nullptr;
        std::uint64_t id_ = 0;
    };

    StateRegistry() = default;
    StateRegistry(const StateRegistry&) = delete;
    StateRegistry& operator=(const StateRegistry&) = delete;

    [[nodiscard]] Handle add(std::string name, StateScope scope, std::function<std::size_t()> payload_bytes,
                             std::function<std::vector<std::byte>()> serialize) {
        const auto id = ++next_id_;
        entries_.push_back({id, std::move(name), scope, std::move(payload_bytes), std::move(serialize)});
        return Handle(this, id);
    }

    /// Registers an object exposing payload_bytes() and serialize(). The
    /// object must not move while the handle lives.
    template <typename T>
    [[nodiscard]] Handle track(std::string name, StateScope scope, const T& object) {
        const T* p = &object;
        return add(std::move(name), scope, [p] { return p->payload_bytes(); }, [p] { return p->serialize(); });
    }

    const std::vector<StateEntry>& entries() const noexcept { return entries_; }

    std::size_t scoped_bytes(StateScope scope) const {
        std::size_t n = 0;
        for (const auto& e : entries_) {
            if (e.scope == scope) n += e.payload_bytes();
        }
        return n;
    }

private:
    void remove(std::uint64_t id) {
        entries_.erase(std::remove_if(entries_.begin(), entries_.end(), [id](const StateEntry& e) { return e.id == id; }),
                       entries_.end());
    }

    std::vector<StateEntry> entries_;
    std::uint64_t next_id_ = 0;
};

/// Optional registration helper: a no-op when no registry is attached.
template <typename T>
StateRegistry::Handle track_if(StateRegistry* registry, std::string name, StateScope scope, const T& object) {
    if (registry == nullptr) return {};
    return registry->track(std::move(name), scope, object);
}

}  // namespace bld
