// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "bld/common/errors.hpp"

namespace bld {

/// Dense row-major 2-D tensor. Batches are rows, features are columns.
template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

/// Throws NumericError naming `where` if any coefficient is NaN or Inf.
template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& values, std::string_view where) {
    if (!values.allFinite()) {
        throw NumericError("non-finite value in " + std::string(where));
    }
}

template <typename Derived>
void require_shape(const Eigen::DenseBase<Derived>& m, Eigen::Index rows, Eigen::Index cols,
                   std::string_view what) {
    if (m.rows() != rows || m.cols() != cols) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                         std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()));
    }
}

}  // namespace bld
