// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bld/common/errors.hpp"
#include "bld/model/multi_head_net.hpp"
#include "bld/nn/ops.hpp"
#include "bld/nn/parameters.hpp"
#include "bld/nn/tensor.hpp"

namespace bld {

/// Activations cached by a forward pass, enough to backpropagate any loss
/// over the requested heads.
template <typename S>
struct ForwardPass {
    std::vector<Matrix<S>> outputs;  // outputs[0] is the input, outputs[i + 1] the output of layer i
    std::vector<std::pair<int, Matrix<S>>> logits;

    const Matrix<S>& features() const { return outputs.back(); }
    Eigen::Index rows() const { return outputs.front().rows(); }

    const Matrix<S>& logits_of(int task_index) const {
        for (const auto& [t, z] : logits) {
            if (t == task_index) return z;
        }
        throw ArgumentError("forward pass has no logits for task " + std::to_string(task_index));
    }
};

template <typename S>
ForwardPass<S> forward(const MultiHeadNet<S>& net, const Matrix<S>& input, std::span<const int> heads) {
    if (input.cols() != static_cast<Eigen::Index>(net.input_dim())) {
        throw ShapeError("forward: input has " + std::to_string(input.cols()) + " columns, extractor expects " +
                         std::to_string(net.input_dim()));
    }
    ForwardPass<S> fp;
    fp.outputs.reserve(net.extractor().size() + 1);
    fp.outputs.push_back(input);
    std::size_t dense = 0;
    for (std::size_t i = 0; i < net.extractor().size(); ++i) {
        const Matrix<S>& x = fp.outputs.back();
        if (net.extractor()[i].kind == LayerKind::dense) {
            const auto& blk = net.params().block(dense++);
            Matrix<S> y(x.rows(), blk.weight.cols());
            y.noalias() = x * blk.weight;
            y.rowwise() += blk.bias;
            require_finite(y, blk.name + " output");
            fp.outputs.push_back(std::move(y));
        } else {
            fp.outputs.push_back(x.cwiseMax(S(0)));
        }
    }
    for (int t : heads) {
        Matrix<S> z = head_logits(net, t, fp.features());
        require_finite(z, "head." + std::to_string(t) + " logits");
        fp.logits.emplace_back(t, std::move(z));
    }
    return fp;
}

/// One cross-entropy term: weight · mean_b H(softmax(z_b / tau), target_b)
/// on the head of `task_index`. Targets are probability rows.
template <typename S>
struct LossTerm {
    int task_index = 0;
    Matrix<S> targets;
    double tau = 1.0;
    double weight = 1.0;
};

template <typename S>
struct LossSpec {
    std::vector<LossTerm<S>> terms;

    std::vector<int> heads() const {
        std::vector<int> h;
        for (const auto& t : terms) h.push_back(t.task_index);
        return h;
    }
};

template <typename S>
struct GradientResult {
    double loss = 0.0;
    GradientSet<S> grads;
    /// ∂loss/∂logits for each term, in term order.
    std::vector<Matrix<S>> logit_grads;
};

namespace detail {

template <typename S>
void check_term(const LossTerm<S>& term, const Matrix<S>& z) {
    require_temperature(term.tau);
    if (term.targets.rows() != z.rows() || term.targets.cols() != z.cols()) {
        throw ShapeError("loss term for task " + std::to_string(term.task_index) + ": targets are " +
                         std::to_string(term.targets.rows()) + "x" + std::to_string(term.targets.cols()) +
                         ", logits are " + std::to_string(z.rows()) + "x" + std::to_string(z.cols()));
    }
    require_finite(term.targets, "loss targets");
    for (Eigen::Index r = 0; r < term.targets.rows(); ++r) {
        if (std::abs(static_cast<double>(term.targets.row(r).sum()) - 1.0) > 1e-5) {
            throw ArgumentError("loss targets row does not sum to 1");
        }
    }
}

}  // namespace detail

/// Loss of a cached forward pass.
template <typename S>
double loss_value(const ForwardPass<S>& fp, const LossSpec<S>& loss) {
    double total = 0.0;
    for (const auto& term : loss.terms) {
        const auto& z = fp.logits_of(term.task_index);
        detail::check_term(term, z);
        total += term.weight * mean_cross_entropy_rows<S>(softmax_rows<S>(z, term.tau), term.targets);
    }
    if (!std::isfinite(total)) throw NumericError("loss is not finite");
    return total;
}

/// Exact gradient of the batch-mean loss with respect to every parameter
/// block. Heads not named by the loss receive zero blocks. At each logit row
/// the softmax/cross-entropy pair contributes weight·(p − target)/(τ·rows).
template <typename S>
GradientResult<S> backward(const MultiHeadNet<S>& net, const ForwardPass<S>& fp, const LossSpec<S>& loss) {
    GradientResult<S> out;
    out.grads = GradientSet<S>::zeros_like(net.params());
    const Eigen::Index n = fp.rows();
    const auto& v = fp.features();
    Matrix<S> dv = Matrix<S>::Zero(v.rows(), v.cols());

    for (const auto& term : loss.terms) {
        const auto& z = fp.logits_of(term.task_index);
        detail::check_term(term, z);
        const Matrix<S> p = softmax_rows<S>(z, term.tau);
        out.loss += term.weight * mean_cross_entropy_rows<S>(p, term.targets);
        const S coef = static_cast<S>(term.weight / (term.tau * static_cast<double>(n)));
        Matrix<S> dz = coef * (p - term.targets);

        const auto block = net.head(term.task_index).block_index;
        const auto& w = net.params().block(block).weight;
        auto& g = out.grads.block(block);
        g.weight.noalias() += v.transpose() * dz;
        g.bias += dz.colwise().sum();
        dv.noalias() += dz * w.transpose();
        out.logit_grads.push_back(std::move(dz));
    }
    if (!std::isfinite(out.loss)) throw NumericError("loss is not finite");

    // Walk the extractor backwards; dv is ∂loss/∂(output of layer i).
    std::size_t dense = net.extractor_blocks();
    for (std::size_t i = net.extractor().size(); i-- > 0;) {
        const Matrix<S>& in = fp.outputs[i];
        if (net.extractor()[i].kind == LayerKind::relu) {
            dv = (fp.outputs[i + 1].array() > S(0)).select(dv, S(0));
            continue;
        }
        --dense;
        const auto& w = net.params().block(dense).weight;
        auto& g = out.grads.block(dense);
        g.weight.noalias() = in.transpose() * dv;
        g.bias = dv.colwise().sum();
        require_finite(g.weight, g.name + " gradient");
        if (i > 0) {
            Matrix<S> next(dv.rows(), w.rows());
            next.noalias() = dv * w.transpose();
            dv = std::move(next);
        }
    }
    return out;
}

template <typename S>
GradientResult<S> forward_backward(const MultiHeadNet<S>& net, const Matrix<S>& input, const LossSpec<S>& loss) {
    const auto heads = loss.heads();
    return backward(net, forward(net, input, heads), loss);
}

/// Loss only; the reference path for finite-difference checks.
template <typename S>
double evaluate_loss(const MultiHeadNet<S>& net, const Matrix<S>& input, const LossSpec<S>& loss) {
    const auto heads = loss.heads();
    return loss_value(forward(net, input, heads), loss);
}

}  // namespace bld
