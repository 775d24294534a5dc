// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bld/baselines/batch_l2.hpp"
#include "bld/common/random.hpp"
#include "bld/model/multi_head_net.hpp"
#include "bld/nn/backprop.hpp"
#include "bld/nn/gradcheck.hpp"

namespace bld::harness {

struct GradCheckCase {
    std::string name;
    std::uint64_t seed = 0;
    GradCheckReport report;
};

namespace detail {

/// Small 64-bit net: 6 -> 5 -> relu -> 4 -> relu, heads of 3, 2 and 2 classes.
inline MultiHeadNet<double> gradcheck_net(Rng& rng) {
    const std::size_t widths[] = {5, 4};
    MultiHeadNet<double> net(mlp_spec(6, widths), rng);
    net.spawn_head(1, {0, 1, 2}, rng);
    net.spawn_head(2, {3, 4}, rng);
    net.spawn_head(3, {5, 6}, rng);
    return net;
}

inline Matrix<double> random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo, double hi) {
    Matrix<double> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, lo, hi);
    return m;
}

inline Matrix<double> random_rows_on_simplex(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Matrix<double> m = random_matrix(rows, cols, rng, 0.05, 1.0);
    for (Eigen::Index r = 0; r < rows; ++r) m.row(r) /= m.row(r).sum();
    return m;
}

inline Matrix<double> one_hot_rows(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Matrix<double> m = Matrix<double>::Zero(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) m(r, static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(cols)))) = 1.0;
    return m;
}

template <typename Extra>
GradCheckReport check_loss(const MultiHeadNet<double>& net, const Matrix<double>& x, const LossSpec<double>& loss,
                           Extra&& extra) {
    auto analytic = forward_backward(net, x, loss).grads;
    analytic.accumulate(extra(net.params()).grads);
    MultiHeadNet<double> probe = net;
    return check_gradient(net.params(), analytic, [&](const ParameterSet<double>& p) {
        probe.params() = p;
        return evaluate_loss(probe, x, loss) + extra(p).value;
    });
}

}  // namespace detail

/// Finite-difference checks of the new-task cross-entropy, the distillation
/// loss and the parameter-anchoring L2 loss on seeded small nets.
inline std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t first_seed = 1, std::size_t seeds = 5) {
    std::vector<GradCheckCase> out;
    for (std::uint64_t s = first_seed; s < first_seed + seeds; ++s) {
        Rng rng = make_rng(s, 0x67726164ULL);
        const auto net = detail::gradcheck_net(rng);
        const Eigen::Index n = 4;
        const Matrix<double> x = detail::random_matrix(n, 6, rng, -1.0, 1.0);
        auto no_extra = [&](const ParameterSet<double>& p) {
            return L2Penalty<double>{0.0, GradientSet<double>::zeros_like(p)};
        };

        LossSpec<double> ce{{{3, detail::one_hot_rows(n, 2, rng), 1.0, 1.0}}};
        out.push_back({"cross_entropy", s, detail::check_loss(net, x, ce, no_extra)});

        LossSpec<double> distill;
        distill.terms.push_back({1, detail::random_rows_on_simplex(n, 3, rng), 2.0, 1.0});
        distill.terms.push_back({2, detail::random_rows_on_simplex(n, 2, rng), 2.0, 1.0});
        out.push_back({"distillation", s, detail::check_loss(net, x, distill, no_extra)});

        ParameterSet<double> anchor = net.params();
        for (auto& b : anchor.blocks()) {
            for (Eigen::Index i = 0; i < b.weight.size(); ++i) b.weight.data()[i] += uniform(rng, -0.1, 0.1);
            for (Eigen::Index i = 0; i < b.bias.size(); ++i) b.bias.data()[i] += uniform(rng, -0.1, 0.1);
        }
        const double weight = uniform(rng, 0.5, 2.0);
        out.push_back({"batch_l2", s, detail::check_loss(net, x, ce, [&](const ParameterSet<double>& p) {
                           return l2_penalty(p, anchor, weight);
                       })});
    }
    return out;
}

}  // namespace bld::harness
