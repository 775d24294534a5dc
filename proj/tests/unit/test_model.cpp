#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "bld/common/errors.hpp"
#include "bld/model/multi_head_net.hpp"
#include "bld/nn/ops.hpp"
#include "support/helpers.hpp"

using namespace bld;
using Catch::Matchers::WithinAbs;

namespace {

// Independent dense/relu forward pass with explicit loops.
std::vector<std::vector<double>> features_oracle(const MultiHeadNet<double>& net, const Matrix<double>& x) {
    std::vector<std::vector<double>> rows;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        std::vector<double> v(x.row(r).data(), x.row(r).data() + x.cols());
        std::size_t dense = 0;
        for (const auto& layer : net.extractor()) {
            if (layer.kind == LayerKind::relu) {
                for (double& e : v) e = e > 0.0 ? e : 0.0;
                continue;
            }
            const auto& b = net.params().block(dense++);
            std::vector<double> out(layer.out_dim);
            for (std::size_t j = 0; j < layer.out_dim; ++j) {
                long double acc = b.bias(static_cast<Eigen::Index>(j));
                for (std::size_t i = 0; i < layer.in_dim; ++i) acc += static_cast<long double>(v[i]) * b.weight(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                out[j] = static_cast<double>(acc);
            }
            v = std::move(out);
        }
        rows.push_back(std::move(v));
    }
    return rows;
}

}  // namespace

TEST_CASE("zero-weight extractor produces zero features", "[model]") {
    auto net = test::make_net<double>(1, 6, {5, 4}, {});
    for (std::size_t i = 0; i < net.extractor_blocks(); ++i) {
        net.params().block(i).weight.setZero();
        net.params().block(i).bias.setZero();
    }
    Rng rng = make_rng(1, 0);
    const auto v = extract_features(net, test::random_matrix<double>(3, 6, rng, -5, 5));
    CHECK(v.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("identical images give identical feature rows", "[model]") {
    const auto net = test::make_net<float>(2, 10, {8, 6}, {});
    Rng rng = make_rng(2, 0);
    const Matrix<float> one = test::random_matrix<float>(1, 10, rng);
    const auto v = extract_features(net, Matrix<float>(one.replicate(4, 1)));
    for (Eigen::Index r = 1; r < 4; ++r) CHECK(v.row(r) == v.row(0));
}

TEST_CASE("features match a loop-based re-implementation", "[model]") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto net = test::make_net<double>(seed, 9, {7, 5}, {});
        Rng rng = make_rng(seed, 3);
        const Matrix<double> x = test::random_matrix<double>(4, 9, rng, -1, 1);
        const auto v = extract_features(net, x);
        const auto ref = features_oracle(net, x);
        for (Eigen::Index r = 0; r < v.rows(); ++r) {
            for (Eigen::Index c = 0; c < v.cols(); ++c) CHECK_THAT(v(r, c), WithinAbs(ref[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)], 1e-13));
        }
    }
}

TEST_CASE("feature extraction rejects mismatched input", "[model]") {
    const auto net = test::make_net<double>(1, 6, {5}, {});
    CHECK_THROWS_AS(extract_features(net, Matrix<double>(Matrix<double>::Zero(2, 7))), ShapeError);
}

TEST_CASE("head predictions", "[model][head]") {
    auto net = test::make_net<double>(3, 6, {5}, {4});
    Rng rng = make_rng(3, 0);
    const auto v = extract_features(net, test::random_matrix<double>(5, 6, rng));

    SECTION("zero head is uniform") {
        auto zero = net;
        zero.params().block(zero.head(1).block_index).weight.setZero();
        zero.params().block(zero.head(1).block_index).bias.setZero();
        const auto p = head_predict(zero, 1, v, 1.0);
        CHECK((p.array() - 0.25).abs().maxCoeff() == 0.0);
    }
    SECTION("tau = 1 is the plain softmax") {
        const auto z = head_logits(net, 1, v);
        const auto p = head_predict(net, 1, v, 1.0);
        for (Eigen::Index r = 0; r < z.rows(); ++r) {
            const RowVector<double> e = z.row(r).array().exp();
            const RowVector<double> ref = e / e.sum();
            CHECK((p.row(r) - ref).cwiseAbs().maxCoeff() < 1e-15);
        }
    }
    SECTION("tau = 2 matches the temperature formula") {
        const auto z = head_logits(net, 1, v);
        const auto p = head_predict(net, 1, v, 2.0);
        for (Eigen::Index r = 0; r < z.rows(); ++r) {
            long double sum = 0;
            std::vector<long double> e;
            for (Eigen::Index c = 0; c < z.cols(); ++c) {
                e.push_back(std::exp(static_cast<long double>(z(r, c)) / 2.0L));
                sum += e.back();
            }
            for (Eigen::Index c = 0; c < z.cols(); ++c) CHECK_THAT(p(r, c), WithinAbs(static_cast<double>(e[static_cast<std::size_t>(c)] / sum), 1e-15));
        }
    }
    SECTION("tau must be positive") { CHECK_THROWS_AS(head_predict(net, 1, v, 0.0), ArgumentError); }
}

TEST_CASE("spawning heads", "[model][spawn]") {
    Rng rng = make_rng(4, 0);
    const std::size_t widths[] = {5, 4};
    MultiHeadNet<double> net(mlp_spec(6, widths), rng);
    CHECK(net.current_task() == 0);

    SECTION("first head") {
        net.spawn_head(1, {3, 7}, rng);
        CHECK(net.current_task() == 1);
        REQUIRE(net.heads().size() == 1);
        const auto& b = net.params().block(net.head(1).block_index);
        CHECK(b.weight.rows() == 4);
        CHECK(b.weight.cols() == 2);
        CHECK(b.weight.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(4.0));
    }
    SECTION("second head leaves everything else untouched") {
        net.spawn_head(1, {0, 1}, rng);
        const auto before = net.params().serialize();
        net.spawn_head(2, {2, 3, 4}, rng);
        CHECK(net.heads().size() == 2);
        CHECK(net.current_task() == 2);
        const auto after = net.params().serialize();
        // The canonical layout puts every payload after the headers; compare
        // the pre-existing blocks one by one instead.
        const auto old = ParameterSet<double>::deserialize(before);
        for (std::size_t i = 0; i < old.num_blocks(); ++i) {
            CHECK(old.block(i).weight == net.params().block(i).weight);
            CHECK(old.block(i).bias == net.params().block(i).bias);
        }
        CHECK(after.size() > before.size());
    }
    SECTION("errors") {
        net.spawn_head(1, {0, 1}, rng);
        CHECK_THROWS_AS(net.spawn_head(1, {2, 3}, rng), ArgumentError);
        CHECK_THROWS_AS(net.spawn_head(3, {2, 3}, rng), ArgumentError);
        CHECK_THROWS_AS(net.spawn_head(2, {2}, rng), ArgumentError);
        CHECK_THROWS_AS(net.spawn_head(2, {2, 2}, rng), ArgumentError);
    }
}

TEST_CASE("spawning is deterministic under a seed", "[model][spawn]") {
    const auto a = test::make_net<float>(9, 8, {6}, {2, 3});
    const auto b = test::make_net<float>(9, 8, {6}, {2, 3});
    CHECK(a.params().identical(b.params()));
}

TEST_CASE("class labels round-trip through a head", "[model][labels]") {
    auto net = test::make_net<double>(5, 4, {3}, {});
    Rng rng = make_rng(5, 0);
    const auto& h = net.spawn_head(1, {7, 2, 9}, rng);
    for (std::size_t i = 0; i < h.num_classes(); ++i) CHECK(h.index_of(h.label_at(i)) == i);
    for (int label : {7, 2, 9}) CHECK(h.label_at(h.index_of(label)) == label);
    CHECK_THROWS_AS(h.index_of(4), ArgumentError);
}

TEST_CASE("checkpoints round-trip", "[model][checkpoint]") {
    const auto net = test::make_net<float>(6, 12, {10, 8}, {2, 3, 2});
    const auto bytes = net.save_checkpoint();
    const auto back = MultiHeadNet<float>::load_checkpoint(bytes);
    CHECK(back.params().identical(net.params()));
    CHECK(back.heads().size() == 3);
    CHECK(back.head(2).class_labels == net.head(2).class_labels);
    CHECK(back.save_checkpoint() == bytes);
    auto bad = bytes;
    bad[0] = std::byte{0};
    CHECK_THROWS_AS(MultiHeadNet<float>::load_checkpoint(bad), FormatError);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    CHECK_THROWS_AS(MultiHeadNet<float>::load_checkpoint(truncated), FormatError);
}

TEST_CASE("batches validate their labels", "[model][batch]") {
    Rng rng = make_rng(6, 0);
    auto b = test::random_batch<double>(4, 5, 1, 3, rng);
    CHECK_NOTHROW(b.validate());
    b.labels(0, 0) += 0.5;
    CHECK_THROWS_AS(b.validate(), ArgumentError);
    Batch<double> empty;
    CHECK_THROWS_AS(empty.validate(), ArgumentError);
}
