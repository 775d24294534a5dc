// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bld/augment/transforms.hpp"
#include "bld/common/errors.hpp"

namespace bld::audit {

/// Auxiliary memory a method needs, in bytes.
struct MemoryReport {
    std::string method;
    std::uint64_t intra_batch_bytes = 0;  // alive while a batch is processed
    std::uint64_t inter_batch_bytes = 0;  // carried from one batch to the next
    std::uint64_t data_storage_bytes = 0;
    std::uint64_t descriptor_bytes = 0;   // augmentation descriptors, kept apart from intra
    std::uint64_t norm_bytes = 0;         // per-layer warm-up norms
    bool constraint1_violated = false;    // information carried across batches
    bool constraint2_violated = false;    // extra network-sized memory
    std::string note;

    bool operator==(const MemoryReport&) const = default;
};

/// Ŷ payload: |B| · K · Σ|Y_o| · bytes_per_float.
inline std::uint64_t bank_bytes(std::uint64_t batch_size, std::uint64_t transforms,
                                std::span<const std::uint64_t> old_class_counts, std::uint64_t bytes_per_float) {
    const std::uint64_t classes = std::accumulate(old_class_counts.begin(), old_class_counts.end(), std::uint64_t{0});
    return batch_size * transforms * classes * bytes_per_float;
}

/// Sizes needed to evaluate the closed forms.
struct ShapeParams {
    std::uint64_t batch_size = 20;
    std::uint64_t transforms = 50;
    std::vector<std::uint64_t> old_class_counts;  // classes of each task seen before the current one
    std::uint64_t bytes_per_float = 4;
    std::uint64_t param_count = 0;
    std::uint64_t layer_count = 0;
    std::uint64_t samples_per_task = 0;
    std::uint64_t bytes_per_sample = 0;  // raw stored image size

    std::uint64_t old_classes() const {
        return std::accumulate(old_class_counts.begin(), old_class_counts.end(), std::uint64_t{0});
    }
};

inline constexpr std::string_view kKnownMethods[] = {"bld",      "bld_no_balancing", "bld_alternated", "finetune",
                                                     "batch_l2", "lwf_single_pass",  "lwf_offline"};

inline bool is_known_method(std::string_view m) {
    for (auto k : kKnownMethods) {
        if (k == m) return true;
    }
    return false;
}

/// Closed-form report for the last task of a sequence described by `shape`.
inline MemoryReport method_overhead(std::string_view method, const ShapeParams& shape) {
    MemoryReport r;
    r.method = std::string(method);
    const std::uint64_t descriptors = shape.transforms * augment::TransformDescriptor::kEncodedBytes;
    if (method == "bld" || method == "bld_no_balancing" || method == "bld_alternated") {
        r.intra_batch_bytes = bank_bytes(shape.batch_size, shape.transforms, shape.old_class_counts, shape.bytes_per_float);
        r.descriptor_bytes = descriptors;
        r.norm_bytes = 8 * shape.layer_count;
    } else if (method == "finetune") {
        r.descriptor_bytes = descriptors;
    } else if (method == "batch_l2") {
        r.intra_batch_bytes = shape.bytes_per_float * shape.param_count;
        r.descriptor_bytes = descriptors;
        r.constraint2_violated = true;
        r.note = "stores a full parameter copy per batch";
    } else if (method == "lwf_single_pass" || method == "lwf_offline") {
        const std::uint64_t store = shape.samples_per_task * shape.old_classes() * shape.bytes_per_float;
        r.intra_batch_bytes = store;
        r.inter_batch_bytes = store;
        r.data_storage_bytes = shape.samples_per_task * shape.bytes_per_sample;
        r.constraint1_violated = true;
        r.note = "data storage is raw task pixels; published data-storage figures are not derivable from it";
        if (method == "lwf_offline") r.note += "; offline upper bound";
    } else {
        throw ArgumentError("method_overhead: unknown method '" + std::string(method) + "'");
    }
    return r;
}

/// Reference dataset shapes for the 5-task, 2-classes-per-task setting at
/// ResNet18 scale, seen while training the last task.
struct PaperPreset {
    std::string_view dataset;
    std::uint64_t samples_per_task;
    std::uint64_t bytes_per_sample;
};

inline constexpr PaperPreset kPaperPresets[] = {
    {"mnist", 12000, 28 * 28},
    {"cifar10", 10000, 32 * 32 * 3},
    {"svhn", 14651, 32 * 32 * 3},
};

inline constexpr std::uint64_t kPaperParamCount = 11'200'000;

inline ShapeParams paper_shape(std::string_view dataset) {
    for (const auto& p : kPaperPresets) {
        if (p.dataset == dataset) {
            ShapeParams s;
            s.old_class_counts = {2, 2, 2, 2};
            s.param_count = kPaperParamCount;
            s.samples_per_task = p.samples_per_task;
            s.bytes_per_sample = p.bytes_per_sample;
            return s;
        }
    }
    throw ArgumentError("paper_shape: unknown dataset '" + std::string(dataset) + "'");
}

}  // namespace bld::audit
