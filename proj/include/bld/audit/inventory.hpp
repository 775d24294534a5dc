// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "bld/audit/state_registry.hpp"
#include "bld/common/errors.hpp"
#include "bld/common/hash.hpp"

namespace bld::audit {

struct InventoryItem {
    std::string name;
    StateScope scope = StateScope::batch;
    std::uint64_t bytes = 0;
    std::uint64_t hash = 0;  // FNV-1a of the canonical serialization
};

/// Every object declared in a learner's registry at one point in time.
struct StateInventory {
    std::vector<InventoryItem> items;
    bool constraint1_violated = false;

    std::set<std::string> names() const {
        std::set<std::string> out;
        for (const auto& i : items) out.insert(i.name);
        return out;
    }
    bool contains(const std::string& name) const { return names().count(name) != 0; }
    const InventoryItem* find(const std::string& name) const {
        for (const auto& i : items) {
            if (i.name == name) return &i;
        }
        return nullptr;
    }
    std::uint64_t bytes_in(StateScope scope) const {
        std::uint64_t n = 0;
        for (const auto& i : items) {
            if (i.scope == scope) n += i.bytes;
        }
        return n;
    }
    /// Only θ, static configuration and the random cursor are present.
    bool parameters_only() const {
        return names() == std::set<std::string>{state_names::parameters, state_names::config, state_names::rng};
    }
};

inline bool is_persistent(StateScope s) {
    return s == StateScope::parameters || s == StateScope::config || s == StateScope::rng;
}

/// Walks the registry without judging what it finds.
inline StateInventory snapshot_inventory(const StateRegistry& registry) {
    StateInventory inv;
    for (const auto& e : registry.entries()) {
        const auto bytes = e.serialize();
        inv.items.push_back({e.name, e.scope, e.payload_bytes(), fnv1a64(bytes)});
        if (!is_persistent(e.scope)) inv.constraint1_violated = true;
    }
    return inv;
}

/// Inventory at a batch boundary. Batch-scoped leftovers are always a
/// violation; task-scoped state is tolerated only from a learner that
/// declares it, and is flagged.
inline StateInventory inter_batch_inventory(const StateRegistry& registry, bool declares_task_storage = false) {
    StateInventory inv = snapshot_inventory(registry);
    for (const auto& item : inv.items) {
        if (item.scope == StateScope::batch) {
            throw ConstraintViolation(item.name, "'" + item.name + "' (" + std::to_string(item.bytes) +
                                                     " bytes) outlived its batch");
        }
        if (item.scope == StateScope::task && !declares_task_storage) {
            throw ConstraintViolation(item.name, "'" + item.name + "' (" + std::to_string(item.bytes) +
                                                     " bytes) is carried across batches by a learner that declares no task storage");
        }
    }
    return inv;
}

template <typename L>
StateInventory inter_batch_inventory(const L& learner) {
    return inter_batch_inventory(learner.registry(), learner.declares_task_storage());
}

}  // namespace bld::audit
