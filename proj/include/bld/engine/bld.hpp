// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <sstream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bld/audit/state_registry.hpp"
#include "bld/augment/transforms.hpp"
#include "bld/common/bytes.hpp"
#include "bld/common/errors.hpp"
#include "bld/common/random.hpp"
#include "bld/engine/replicas.hpp"
#include "bld/model/multi_head_net.hpp"
#include "bld/nn/backprop.hpp"
#include "bld/nn/parameters.hpp"

namespace bld {

enum class BldMode { full, no_balancing, alternated };

inline const char* to_string(BldMode m) {
    switch (m) {
        case BldMode::full: return "full";
        case BldMode::no_balancing: return "no_balancing";
        case BldMode::alternated: return "alternated";
    }
    return "unknown";
}

inline BldMode parse_bld_mode(std::string_view s) {
    if (s == "full") return BldMode::full;
    if (s == "no_balancing") return BldMode::no_balancing;
    if (s == "alternated") return BldMode::alternated;
    throw ConfigError("unknown BLD mode '" + std::string(s) + "'");
}

/// Hyper-parameters of Batch-level Distillation. Defaults are the published
/// ones except τ, which is not published.
struct BldConfig {
    double alpha_j = 1e-4;
    double alpha_w = 1e-6;  // 1e-2 · alpha_j
    double lambda = 2.0;
    double tau = 2.0;
    std::size_t joint_iterations = 2;
    std::size_t batch_size = 20;
    BldMode mode = BldMode::full;
    AugmentConfig augment{};

    void validate() const {
        if (!(alpha_j > 0.0) || !(alpha_w > 0.0)) throw ConfigError("BLD learning rates must be > 0");
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("BLD lambda must be >= 0");
        if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("BLD tau must be > 0");
        if (joint_iterations < 1) throw ConfigError("BLD joint_iterations must be >= 1");
        if (batch_size < 1) throw ConfigError("BLD batch_size must be >= 1");
        augment.validate();
    }

    std::string describe() const {
        std::ostringstream os;
        os.precision(17);
        os << "alpha_j=" << alpha_j << " alpha_w=" << alpha_w << " lambda=" << lambda << " tau=" << tau
           << " joint_iterations=" << joint_iterations << " batch_size=" << batch_size << " mode=" << to_string(mode)
           << " transforms=" << augment.transforms;
        return os.str();
    }
};

/// Ŷ: soft predictions of every old head on every replica of the current
/// batch, plus the descriptors needed to regenerate those replicas.
/// predictions[i] belongs to tasks[i] and has |B|·K rows; row k·|B| + b is
/// image b under transform k.
template <typename S>
struct ProbabilityBank {
    augment::TransformSet transforms;
    Eigen::Index batch_rows = 0;
    std::vector<int> tasks;
    std::vector<Matrix<S>> predictions;

    /// Probability payload only; descriptors are accounted separately.
    std::size_t payload_bytes() const noexcept {
        std::size_t n = 0;
        for (const auto& p : predictions) n += static_cast<std::size_t>(p.size()) * sizeof(S);
        return n;
    }

    /// Soft targets of task `tasks[slot]` for replica k.
    Matrix<S> replica_targets(std::size_t slot, std::size_t k) const {
        return predictions.at(slot).middleRows(static_cast<Eigen::Index>(k) * batch_rows, batch_rows);
    }

    std::vector<std::byte> serialize() const {
        ByteWriter w;
        w.put(static_cast<std::uint8_t>(sizeof(S)));
        w.put(static_cast<std::uint32_t>(batch_rows));
        w.put(static_cast<std::uint32_t>(tasks.size()));
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            const auto& p = predictions[i];
            w.put(static_cast<std::int32_t>(tasks[i]));
            w.put(static_cast<std::uint32_t>(p.rows()));
            w.put(static_cast<std::uint32_t>(p.cols()));
            w.put_all(std::span<const S>(p.data(), static_cast<std::size_t>(p.size())));
        }
        const auto d = transforms.serialize();
        w.put(static_cast<std::uint32_t>(d.size()));
        w.buffer().insert(w.buffer().end(), d.begin(), d.end());
        return w.take();
    }

    static ProbabilityBank deserialize(std::span<const std::byte> bytes) {
        ByteReader r(bytes);
        if (r.get<std::uint8_t>() != sizeof(S)) throw FormatError("probability bank: scalar width mismatch");
        ProbabilityBank bank;
        bank.batch_rows = r.get<std::uint32_t>();
        const auto n = r.get<std::uint32_t>();
        for (std::uint32_t i = 0; i < n; ++i) {
            bank.tasks.push_back(r.get<std::int32_t>());
            const auto rows = r.get<std::uint32_t>();
            const auto cols = r.get<std::uint32_t>();
            Matrix<S> p(rows, cols);
            r.get_all(std::span<S>(p.data(), static_cast<std::size_t>(p.size())));
            bank.predictions.push_back(std::move(p));
        }
        const auto dn = r.get<std::uint32_t>();
        if (bytes.size() - r.position() != dn) throw FormatError("probability bank: descriptor length mismatch");
        bank.transforms = augment::TransformSet::deserialize(bytes.subspan(r.position()));
        return bank;
    }
};

/// Per-layer ||G_w|| carried from the warm-up into the joint stage.
struct LayerNorms {
    std::vector<double> values;

    std::size_t payload_bytes() const noexcept { return values.size() * sizeof(double); }
    std::vector<std::byte> serialize() const {
        ByteWriter w;
        w.put_all(std::span<const double>(values));
        return w.take();
    }
};

template <typename S>
struct WarmUpOutput {
    ProbabilityBank<S> bank;
    LayerNorms gw_norms;
    double loss = 0.0;
};

/// Optional per-batch record; emitted only when a sink is attached.
struct BatchDiagnostics {
    int task_index = 0;
    double warmup_loss = 0.0;
    std::vector<double> new_task_loss;  // one per joint iteration
    std::vector<double> distill_loss;
    /// ||G_j[l]|| / ||G_w[l]|| before balancing, per iteration and layer.
    std::vector<std::vector<double>> distill_norm_ratio;
    /// ||∂L_t/∂θ'[l]|| / ||G_w[l]||: how far the new-task gradient norm drifted
    /// from the warm-up estimate.
    std::vector<std::vector<double>> new_task_norm_ratio;
};

template <typename S>
struct BatchHooks {
    StateRegistry* registry = nullptr;
    std::function<void(const BatchDiagnostics&)> diagnostics;
    std::function<void()> mid_batch;  // runs after the warm-up, bank alive
};

enum class BalanceRule {
    norm_ratio,  // scale layer l by λ·||G_w[l]|| / ||G_j[l]||
    unit_ratio,  // scale every layer by λ
};

/// Layers whose distillation gradient norm is at or below this are left as is.
inline constexpr double kNormEpsilon = 1e-12;

/// G_j ← λ (||G_w|| / ||G_j||) G_j, layer by layer.
template <typename S>
GradientSet<S> balance_distillation_gradient(GradientSet<S> gj, std::span<const double> gw_norms, double lambda,
                                             BalanceRule rule = BalanceRule::norm_ratio) {
    if (gw_norms.size() != gj.num_blocks()) {
        throw ShapeError("balance_distillation_gradient: " + std::to_string(gw_norms.size()) + " norms for " +
                         std::to_string(gj.num_blocks()) + " layers");
    }
    const auto gj_norms = layer_norms(gj);
    for (std::size_t l = 0; l < gj.num_blocks(); ++l) {
        if (gj_norms[l] <= kNormEpsilon) continue;
        const double ratio = rule == BalanceRule::norm_ratio ? gw_norms[l] / gj_norms[l] : 1.0;
        gj.scale_block(l, static_cast<S>(lambda * ratio));
    }
    return gj;
}

namespace detail {

inline std::vector<int> old_tasks(std::span<const Head> heads, int current) {
    std::vector<int> out;
    for (const auto& h : heads) {
        if (h.task_index < current) out.push_back(h.task_index);
    }
    return out;
}

template <typename S>
void check_batch_for(const MultiHeadNet<S>& net, const Batch<S>& batch) {
    if (!net.has_head(batch.task_index)) {
        throw ArgumentError("no head for the batch's task " + std::to_string(batch.task_index));
    }
    batch.validate();
    if (static_cast<std::size_t>(batch.labels.cols()) != net.head(batch.task_index).num_classes()) {
        throw ShapeError("batch labels do not match the head's class count");
    }
}

inline std::vector<double> norm_ratio(const std::vector<double>& num, const std::vector<double>& den) {
    std::vector<double> r(num.size());
    for (std::size_t i = 0; i < num.size(); ++i) r[i] = den[i] > kNormEpsilon ? num[i] / den[i] : 0.0;
    return r;
}

template <typename S>
LossSpec<S> distillation_loss(const ProbabilityBank<S>& bank, std::size_t k, double tau) {
    LossSpec<S> loss;
    for (std::size_t slot = 0; slot < bank.tasks.size(); ++slot) {
        loss.terms.push_back({bank.tasks[slot], bank.replica_targets(slot, k), tau, 1.0});
    }
    return loss;
}

template <typename S>
std::vector<int> with_current(std::vector<int> heads, int current) {
    heads.push_back(current);
    return heads;
}

}  // namespace detail

/// Warm-up stage: fills the bank at θ from K replicas, takes one SGD step
/// with α_w on the new-task cross-entropy, returns Ŷ and per-layer ||G_w||.
/// The network is left holding θ'.
template <typename S>
WarmUpOutput<S> warm_up_stage(MultiHeadNet<S>& net, const Batch<S>& batch, const BldConfig& cfg, Rng& rng) {
    detail::check_batch_for(net, batch);
    const int t = batch.task_index;
    const std::size_t K = cfg.augment.transforms;

    WarmUpOutput<S> out;
    auto& bank = out.bank;
    bank.transforms = augment::sample_descriptors(K, rng, cfg.augment.policy);
    bank.batch_rows = batch.size();
    bank.tasks = detail::old_tasks(net.heads(), t);
    for (int o : bank.tasks) {
        bank.predictions.emplace_back(batch.size() * static_cast<Eigen::Index>(K),
                                      static_cast<Eigen::Index>(net.head(o).num_classes()));
    }

    const auto heads = detail::with_current<S>(bank.tasks, t);
    auto means = replica_means<S>(
        net, batch, bank.transforms, cfg.augment.image_side, heads, 1,
        [&](std::size_t, std::size_t) { return new_task_loss(batch); },
        [&](std::size_t k, const ForwardPass<S>& fp) {
            for (std::size_t slot = 0; slot < bank.tasks.size(); ++slot) {
                bank.predictions[slot].middleRows(static_cast<Eigen::Index>(k) * batch.size(), batch.size()) =
                    softmax_rows<S>(fp.logits_of(bank.tasks[slot]), cfg.tau);
            }
        });
    auto& gw = means.front();
    out.loss = gw.loss;
    out.gw_norms.values = layer_norms(gw.grads);
    sgd_step(net.params(), gw.grads, cfg.alpha_w);
    return out;
}

/// Joint training stage: J iterations of balanced distillation plus the
/// new-task gradient, each followed by an SGD step with α_j. The bank and
/// ||G_w|| are reused unchanged across iterations; the caller releases them.
template <typename S>
void joint_training_stage(MultiHeadNet<S>& net, const Batch<S>& batch, const WarmUpOutput<S>& warm,
                          const BldConfig& cfg, BalanceRule rule = BalanceRule::norm_ratio,
                          BatchDiagnostics* diag = nullptr) {
    detail::check_batch_for(net, batch);
    const auto& bank = warm.bank;
    const int t = batch.task_index;
    const std::size_t K = bank.transforms.size();
    if (bank.batch_rows != batch.size()) throw ShapeError("probability bank was built for a different batch size");
    if (bank.tasks != detail::old_tasks(net.heads(), t)) throw ArgumentError("probability bank old tasks mismatch");
    for (std::size_t slot = 0; slot < bank.tasks.size(); ++slot) {
        const auto& p = bank.predictions[slot];
        if (p.rows() != batch.size() * static_cast<Eigen::Index>(K) ||
            static_cast<std::size_t>(p.cols()) != net.head(bank.tasks[slot]).num_classes()) {
            throw ShapeError("probability bank does not match the transform set");
        }
    }
    if (warm.gw_norms.values.size() != net.params().num_blocks()) throw ShapeError("warm-up norms do not match layers");

    const auto heads = detail::with_current<S>(bank.tasks, t);
    for (std::size_t j = 0; j < cfg.joint_iterations; ++j) {
        auto means = replica_means<S>(
            net, batch, bank.transforms, cfg.augment.image_side, heads, 2,
            [&](std::size_t i, std::size_t k) {
                return i == 0 ? detail::distillation_loss(bank, k, cfg.tau) : new_task_loss(batch);
            },
            [](std::size_t, const ForwardPass<S>&) {});
        auto& gd = means[0];
        auto& gt = means[1];
        if (diag != nullptr) {
            diag->distill_loss.push_back(gd.loss);
            diag->new_task_loss.push_back(gt.loss);
            diag->distill_norm_ratio.push_back(detail::norm_ratio(layer_norms(gd.grads), warm.gw_norms.values));
            diag->new_task_norm_ratio.push_back(detail::norm_ratio(layer_norms(gt.grads), warm.gw_norms.values));
        }
        GradientSet<S> g = balance_distillation_gradient(std::move(gd.grads), warm.gw_norms.values, cfg.lambda, rule);
        g.accumulate(gt.grads);
        sgd_step(net.params(), g, cfg.alpha_j);
    }
}

/// Ablation: after the warm-up, each iteration takes a pure new-task step and
/// then a pure distillation step (λ-weighted, no norm balancing).
template <typename S>
void alternated_stage(MultiHeadNet<S>& net, const Batch<S>& batch, const WarmUpOutput<S>& warm, const BldConfig& cfg,
                      BatchDiagnostics* diag = nullptr) {
    detail::check_batch_for(net, batch);
    const auto& bank = warm.bank;
    const auto heads = detail::with_current<S>(bank.tasks, batch.task_index);
    for (std::size_t j = 0; j < cfg.joint_iterations; ++j) {
        auto gt = new_task_gradient(net, batch, bank.transforms, cfg.augment.image_side);
        sgd_step(net.params(), gt.grads, cfg.alpha_j);
        auto gd = std::move(replica_means<S>(
                                net, batch, bank.transforms, cfg.augment.image_side, heads, 1,
                                [&](std::size_t, std::size_t k) { return detail::distillation_loss(bank, k, cfg.tau); },
                                [](std::size_t, const ForwardPass<S>&) {})
                                .front());
        if (diag != nullptr) {
            diag->new_task_loss.push_back(gt.loss);
            diag->distill_loss.push_back(gd.loss);
        }
        gd.grads.scale(static_cast<S>(cfg.lambda));
        sgd_step(net.params(), gd.grads, cfg.alpha_j);
    }
}

/// One mini-batch of BLD in the configured mode. Only θ survives the call.
template <typename S>
void process_batch(MultiHeadNet<S>& net, const Batch<S>& batch, const BldConfig& cfg, Rng& rng,
                   const BatchHooks<S>& hooks = {}) {
    cfg.validate();
    WarmUpOutput<S> warm = warm_up_stage(net, batch, cfg, rng);
    auto bank_handle = track_if(hooks.registry, state_names::probability_bank, StateScope::batch, warm.bank);
    auto transforms_handle = track_if(hooks.registry, state_names::transform_descriptors, StateScope::batch, warm.bank.transforms);
    auto norms_handle = track_if(hooks.registry, state_names::warmup_grad_norms, StateScope::batch, warm.gw_norms);
    if (hooks.mid_batch) hooks.mid_batch();

    BatchDiagnostics diag;
    diag.task_index = batch.task_index;
    diag.warmup_loss = warm.loss;
    BatchDiagnostics* d = hooks.diagnostics ? &diag : nullptr;
    switch (cfg.mode) {
        case BldMode::full: joint_training_stage(net, batch, warm, cfg, BalanceRule::norm_ratio, d); break;
        case BldMode::no_balancing: joint_training_stage(net, batch, warm, cfg, BalanceRule::unit_ratio, d); break;
        case BldMode::alternated: alternated_stage(net, batch, warm, cfg, d); break;
    }
    if (hooks.diagnostics) hooks.diagnostics(diag);
}

}  // namespace bld
