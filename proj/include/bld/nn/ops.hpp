// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "bld/common/errors.hpp"
#include "bld/nn/tensor.hpp"

namespace bld {

/// Lower clamp applied to predicted probabilities before taking the log.
inline constexpr double kLogClamp = 1e-12;

inline void require_temperature(double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ArgumentError("temperature must be positive and finite");
}

/// Row-wise softmax(z / tau) with max subtraction.
template <typename S>
Matrix<S> softmax_rows(const Matrix<S>& logits, double tau) {
    require_temperature(tau);
    require_finite(logits, "softmax logits");
    const S inv_tau = static_cast<S>(1.0 / tau);
    Matrix<S> p(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const S m = logits.row(r).maxCoeff();
        p.row(r) = ((logits.row(r).array() - m) * inv_tau).exp().matrix();
        p.row(r) /= p.row(r).sum();
    }
    return p;
}

/// softmax(logits / tau) of a single vector.
template <typename S>
std::vector<S> softmax_temperature(std::span<const S> logits, double tau) {
    if (logits.size() < 2) throw ArgumentError("softmax_temperature: need at least two logits");
    Matrix<S> z = Eigen::Map<const Matrix<S>>(logits.data(), 1, static_cast<Eigen::Index>(logits.size()));
    const Matrix<S> p = softmax_rows<S>(z, tau);
    return {p.data(), p.data() + p.size()};
}

/// −Σ_k target_k · log(max(pred_k, ε)).
template <typename S>
S cross_entropy_soft(std::span<const S> pred, std::span<const S> target) {
    if (pred.size() != target.size()) throw ShapeError("cross_entropy_soft: length mismatch");
    auto check = [](std::span<const S> v, const char* what) {
        double sum = 0.0;
        for (S x : v) {
            if (!std::isfinite(static_cast<double>(x))) throw NumericError(std::string("cross_entropy_soft: non-finite ") + what);
            if (x < S(0)) throw ArgumentError(std::string("cross_entropy_soft: negative ") + what);
            sum += static_cast<double>(x);
        }
        if (std::abs(sum - 1.0) > 1e-6) throw ArgumentError(std::string("cross_entropy_soft: ") + what + " does not sum to 1");
    };
    check(pred, "prediction");
    check(target, "target");
    S loss = 0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        if (target[k] != S(0)) loss -= target[k] * std::log(std::max(pred[k], static_cast<S>(kLogClamp)));
    }
    return loss;
}

/// Mean over rows of the soft cross-entropy between probability rows and target rows.
template <typename S>
double mean_cross_entropy_rows(const Matrix<S>& pred, const Matrix<S>& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw ShapeError("mean_cross_entropy_rows: shape mismatch");
    }
    const S clamp = static_cast<S>(kLogClamp);
    double total = 0.0;
    for (Eigen::Index r = 0; r < pred.rows(); ++r) {
        double row = 0.0;
        for (Eigen::Index k = 0; k < pred.cols(); ++k) {
            const S t = target(r, k);
            if (t != S(0)) row -= static_cast<double>(t) * std::log(static_cast<double>(std::max(pred(r, k), clamp)));
        }
        total += row;
    }
    return pred.rows() > 0 ? total / static_cast<double>(pred.rows()) : 0.0;
}

}  // namespace bld
