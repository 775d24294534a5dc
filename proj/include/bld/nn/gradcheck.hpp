// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "bld/nn/parameters.hpp"

namespace bld {

struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t checked = 0;
    std::string worst;  // "block[index]" of the largest relative error
};

/// Compares an analytic gradient against central differences of `loss_at`
/// (a callable ParameterSet -> double) for every coefficient. Relative error
/// is |a − n| / max(|a|, |n|, floor).
template <typename S, typename LossAt>
GradCheckReport check_gradient(ParameterSet<S> params, const GradientSet<S>& analytic, LossAt&& loss_at,
                               double step = 1e-5, double floor = 1e-6) {
    GradCheckReport report;
    auto probe = [&](S& slot, S grad, const std::string& where) {
        const S saved = slot;
        slot = static_cast<S>(static_cast<double>(saved) + step);
        const double up = loss_at(params);
        slot = static_cast<S>(static_cast<double>(saved) - step);
        const double down = loss_at(params);
        slot = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double a = static_cast<double>(grad);
        const double abs_err = std::abs(a - numeric);
        const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
        report.max_abs_error = std::max(report.max_abs_error, abs_err);
        if (rel_err > report.max_rel_error || report.checked == 0) {
            report.max_rel_error = std::max(report.max_rel_error, rel_err);
            report.worst = where;
        }
        ++report.checked;
    };
    for (std::size_t b = 0; b < params.num_blocks(); ++b) {
        auto& blk = params.block(b);
        const auto& g = analytic.block(b);
        for (Eigen::Index i = 0; i < blk.weight.size(); ++i) {
            probe(blk.weight.data()[i], g.weight.data()[i], blk.name + ".weight[" + std::to_string(i) + "]");
        }
        for (Eigen::Index i = 0; i < blk.bias.size(); ++i) {
            probe(blk.bias.data()[i], g.bias.data()[i], blk.name + ".bias[" + std::to_string(i) + "]");
        }
    }
    return report;
}

}  // namespace bld
