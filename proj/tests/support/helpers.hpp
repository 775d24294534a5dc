// Shared fixtures for the test binaries.
#pragma once

#include <cstdint>
#include <vector>

#include "bld/common/random.hpp"
#include "bld/model/multi_head_net.hpp"
#include "bld/nn/parameters.hpp"

namespace bld::test {

template <typename S>
MultiHeadNet<S> make_net(std::uint64_t seed, std::size_t input_dim, std::vector<std::size_t> widths,
                         std::vector<std::size_t> head_classes) {
    Rng rng = make_rng(seed, 99);
    MultiHeadNet<S> net(mlp_spec(input_dim, widths), rng);
    int label = 0;
    for (std::size_t t = 0; t < head_classes.size(); ++t) {
        std::vector<int> labels;
        for (std::size_t c = 0; c < head_classes[t]; ++c) labels.push_back(label++);
        net.spawn_head(static_cast<int>(t + 1), labels, rng);
    }
    return net;
}

template <typename S>
Matrix<S> random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Matrix<S> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(uniform(rng, lo, hi));
    return m;
}

template <typename S>
Matrix<S> one_hot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Matrix<S> m = Matrix<S>::Zero(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        m(r, static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(cols)))) = S(1);
    }
    return m;
}

template <typename S>
Matrix<S> simplex_rows(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Matrix<S> m = random_matrix<S>(rows, cols, rng, 0.05, 1.0);
    for (Eigen::Index r = 0; r < rows; ++r) m.row(r) /= m.row(r).sum();
    return m;
}

/// Batch of `rows` images with values in [0, 1] for head `task` of `classes` outputs.
template <typename S>
Batch<S> random_batch(Eigen::Index rows, std::size_t dim, int task, std::size_t classes, Rng& rng) {
    Batch<S> b;
    b.task_index = task;
    b.images = random_matrix<S>(rows, static_cast<Eigen::Index>(dim), rng);
    b.labels = one_hot<S>(rows, static_cast<Eigen::Index>(classes), rng);
    return b;
}

/// Brute-force sum of squares of one block.
template <typename S>
double block_norm(const DenseBlock<S>& b) {
    long double s = 0;
    for (Eigen::Index i = 0; i < b.weight.rows(); ++i) {
        for (Eigen::Index j = 0; j < b.weight.cols(); ++j) s += static_cast<long double>(b.weight(i, j)) * b.weight(i, j);
    }
    for (Eigen::Index j = 0; j < b.bias.size(); ++j) s += static_cast<long double>(b.bias(j)) * b.bias(j);
    return static_cast<double>(std::sqrt(s));
}

}  // namespace bld::test
