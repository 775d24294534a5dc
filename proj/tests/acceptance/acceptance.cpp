// Acceptance suite: one test case per criterion, one PASS/FAIL line each.
#include <catch_amalgamated.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bld/harness/cli.hpp"

using namespace bld;
using namespace bld::harness;
namespace fs = std::filesystem;

namespace {

class CriterionListener : public Catch::EventListenerBase {
public:
    using EventListenerBase::EventListenerBase;

    void testCaseEnded(const Catch::TestCaseStats& stats) override {
        const bool ok = stats.totals.assertions.allPassed() && stats.totals.assertions.total() > 0;
        std::printf("%s  %s\n", ok ? "PASS" : "FAIL", stats.testInfo->name.c_str());
        std::fflush(stdout);
    }
};

const fs::path kConfigs = BLD_SOURCE_DIR "/configs";

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void note(const std::string& line) {
    std::printf("      %s\n", line.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

ExperimentConfig with_method(ExperimentConfig cfg, const std::string& method) {
    cfg.method = method;
    cfg.bld.mode = method == "bld_no_balancing" ? BldMode::no_balancing
                   : method == "bld_alternated" ? BldMode::alternated
                                                : BldMode::full;
    cfg.lwf.offline = method == "lwf_offline";
    cfg.validate();
    return cfg;
}

/// Per-(config, method) results, so criteria sharing a run do not repeat it.
const Aggregate& cached_run(const fs::path& config, const std::string& method) {
    static std::map<std::pair<std::string, std::string>, Aggregate> cache;
    const auto key = std::make_pair(config.string(), method);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    const auto cfg = with_method(load_config(config), method);
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = run_experiment(cfg);
    for (const auto& r : result.runs) {
        if (!r.ok()) note(method + " seed " + std::to_string(r.seed) + " failed: " + r.error);
    }
    std::ostringstream acc;
    for (double a : result.summary.accuracy) acc << fmt(" %.1f", a);
    note(config.filename().string() + " " + method + ":" + acc.str() + fmt("  avg %.2f (sd %.2f)  %.0fs",
                                                                          result.summary.average,
                                                                          result.summary.average_std, seconds_since(t0)));
    return cache.emplace(key, result.summary).first->second;
}

bool mnist_available() {
    return fs::exists(fs::path(BLD_SOURCE_DIR) / "data/mnist/train-images-idx3-ubyte.gz");
}

/// Small two-task split-MNIST sequence for trajectory comparisons.
struct SmallMnist {
    ExperimentConfig cfg;
    TaskSequence data;
};

SmallMnist small_mnist(std::size_t per_task, std::uint64_t seed) {
    SmallMnist s;
    s.cfg = load_config(kConfigs / "desk_split_mnist_2.ini");
    s.cfg.data.max_train_per_task = per_task;
    auto train = std::make_shared<const Dataset>(load_idx(s.cfg.data.train_images, s.cfg.data.train_labels));
    auto test = std::make_shared<const Dataset>(load_idx(s.cfg.data.test_images, s.cfg.data.test_labels));
    s.data = prepare_tasks(s.cfg.data, train, test, seed);
    for (auto* a : {&s.cfg.bld.augment, &s.cfg.finetune.augment, &s.cfg.batch_l2.augment}) a->image_side = 28;
    return s;
}

/// Parameters after every batch of every task.
std::vector<std::vector<std::byte>> trajectory(Learner<Scalar>& learner, const TaskSequence& data, std::size_t batch,
                                               std::uint64_t seed, std::size_t tasks = 0) {
    std::vector<std::vector<std::byte>> out;
    learner.on_batch_boundary([&](const Learner<Scalar>& l) { out.push_back(l.net().params().serialize()); });
    const std::size_t n = tasks == 0 ? data.train_tasks.size() : tasks;
    for (std::size_t t = 0; t < n; ++t) {
        learner.begin_task(data.train_tasks[t]);
        TaskStream<Scalar> stream(*data.train, data.train_tasks[t], batch, seed);
        learner.learn_task(stream);
        out.push_back(learner.net().params().serialize());
    }
    return out;
}

MultiHeadNet<Scalar> fresh_net(const ExperimentConfig& cfg, std::uint64_t seed) {
    Rng init = make_rng(seed, 0x696e6974ULL);
    return MultiHeadNet<Scalar>(extractor_spec(cfg, 784), init);
}

/// BLD whose joint stage replaces every per-layer ratio by 1 outside the engine.
class ForcedRatioBld : public BldLearner<Scalar> {
public:
    using BldLearner<Scalar>::BldLearner;

    void process(const Batch<Scalar>& batch) override {
        auto& net = this->net();
        const auto warm = warm_up_stage(net, batch, cfg_, this->mutable_rng());
        const auto heads = bld::detail::with_current<Scalar>(warm.bank.tasks, batch.task_index);
        for (std::size_t j = 0; j < cfg_.joint_iterations; ++j) {
            auto m = replica_means<Scalar>(
                net, batch, warm.bank.transforms, cfg_.augment.image_side, heads, 2,
                [&](std::size_t i, std::size_t k) {
                    return i == 0 ? bld::detail::distillation_loss(warm.bank, k, cfg_.tau) : new_task_loss(batch);
                },
                [](std::size_t, const ForwardPass<Scalar>&) {});
            const auto norms = layer_norms(m[0].grads);
            for (std::size_t l = 0; l < norms.size(); ++l) {
                if (norms[l] > kNormEpsilon) m[0].grads.scale_block(l, static_cast<Scalar>(cfg_.lambda * 1.0));
            }
            m[0].grads.accumulate(m[1].grads);
            sgd_step(net.params(), m[0].grads, cfg_.alpha_j);
        }
    }
};

/// Keeps its last bank registered after the batch ends.
class LeakyBld : public BldLearner<Scalar> {
public:
    using BldLearner<Scalar>::BldLearner;

    void process(const Batch<Scalar>& batch) override {
        BldLearner<Scalar>::process(batch);
        kept_.batch_rows = batch.size();
        kept_.predictions.assign(1, Matrix<Scalar>::Zero(batch.size(), 2));
        handle_ = mutable_registry().track(state_names::probability_bank, StateScope::batch, kept_);
    }

private:
    ProbabilityBank<Scalar> kept_;
    StateRegistry::Handle handle_;
};

int cli(std::vector<std::string> args, const LearnerFactory& factory, std::string* out_text = nullptr) {
    args.insert(args.begin(), "bld_cli");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), factory, out, err);
    if (out_text != nullptr) *out_text = out.str();
    return code;
}

}  // namespace

CATCH_REGISTER_LISTENER(CriterionListener)

TEST_CASE("criterion 1: memory arithmetic at reference shapes", "[acceptance]") {
    const auto t0 = std::chrono::steady_clock::now();
    for (const char* d : {"mnist", "cifar10", "svhn"}) {
        const auto shape = audit::paper_shape(d);
        const auto bld = audit::method_overhead("bld", shape);
        CHECK(bld.intra_batch_bytes == 32000u);
        CHECK(bld.inter_batch_bytes == 0u);
        CHECK(audit::method_overhead("batch_l2", shape).intra_batch_bytes == 44800000u);
        CHECK(audit::method_overhead("batch_l2", shape).inter_batch_bytes == 0u);
    }
    const std::pair<const char*, std::uint64_t> lwf[] = {{"mnist", 384000}, {"cifar10", 320000}, {"svhn", 468832}};
    for (const auto& [d, bytes] : lwf) {
        for (const char* m : {"lwf_single_pass", "lwf_offline"}) {
            const auto r = audit::method_overhead(m, audit::paper_shape(d));
            CHECK(r.intra_batch_bytes == bytes);
            CHECK(r.inter_batch_bytes == bytes);
        }
    }
    std::string text;
    CHECK(cli({"audit", (kConfigs / "synthetic_5.ini").string(), "--dataset", "all"}, make_learner, &text) == 0);
    for (const char* v : {"32000", "44800000", "384000", "320000", "468832"}) CHECK(text.find(v) != std::string::npos);
    const double s = seconds_since(t0);
    note(fmt("%.3f s", s));
    CHECK(s < 1.0);
}

TEST_CASE("criterion 2: distillation logit gradient vanishes at theta' = theta", "[acceptance]") {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::size_t exact_zero = 0, total = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng = make_rng(seed, 0xac02);
        const std::size_t widths[] = {12, 8};
        MultiHeadNet<double> net(mlp_spec(16, widths), rng);
        for (int t = 1; t <= 3; ++t) net.spawn_head(t, {2 * t, 2 * t + 1}, rng);
        Batch<double> batch;
        batch.task_index = 3;
        batch.images = Matrix<double>(6, 16);
        for (Eigen::Index i = 0; i < batch.images.size(); ++i) batch.images.data()[i] = uniform01(rng);
        batch.labels = Matrix<double>::Zero(6, 2);
        for (Eigen::Index r = 0; r < 6; ++r) batch.labels(r, static_cast<Eigen::Index>(uniform_index(rng, 2))) = 1.0;
        BldConfig cfg;
        cfg.alpha_w = 0.0;  // skip the warm-up update
        cfg.augment.transforms = 3;
        cfg.augment.image_side = 4;
        cfg.augment.policy.max_shift = 1;
        const auto warm = warm_up_stage(net, batch, cfg, rng);
        for (std::size_t k = 0; k < warm.bank.transforms.size(); ++k) {
            const auto x = augment::apply_batch<double>(batch.images, 4, warm.bank.transforms.descriptors[k]);
            const auto r = forward_backward(net, x, bld::detail::distillation_loss(warm.bank, k, cfg.tau));
            for (const auto& dz : r.logit_grads) {
                ++total;
                const double m = dz.cwiseAbs().maxCoeff();
                worst = std::max(worst, m);
                exact_zero += m == 0.0;
            }
        }
    }
    note(fmt("max |dL/dz| = %.3e, exactly zero in %.0f of %.0f head blocks", worst, static_cast<double>(exact_zero),
             static_cast<double>(total)));
    CHECK(worst < 1e-10);
    CHECK(seconds_since(t0) < 10.0);
}

TEST_CASE("criterion 3: analytic gradients match central differences", "[acceptance]") {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng = make_rng(1, 0);
    const auto params = harness::detail::gradcheck_net(rng).params().param_count();
    CHECK(params <= 1000u);
    std::map<std::string, double> worst;
    for (const auto& c : run_gradcheck_suite(1, 5)) {
        worst[c.name] = std::max(worst[c.name], c.report.max_rel_error);
        CHECK(c.report.checked == params);
        CHECK(c.report.max_rel_error < 1e-4);
    }
    CHECK(worst.size() == 3);
    for (const auto& [name, e] : worst) note(name + fmt(": max relative error %.3e", e));
    CHECK(seconds_since(t0) < 60.0);
}

TEST_CASE("criterion 4: balanced layer norms equal lambda times warm-up norms", "[acceptance]") {
    double worst = 0.0;
    std::size_t layers = 0, zero_layers = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng = make_rng(seed, 0xac04);
        const std::size_t widths[] = {10, 6};
        MultiHeadNet<double> net(mlp_spec(16, widths), rng);
        for (int t = 1; t <= 3; ++t) net.spawn_head(t, {2 * t, 2 * t + 1}, rng);
        Batch<double> batch;
        batch.task_index = 3;
        batch.images = Matrix<double>(5, 16);
        for (Eigen::Index i = 0; i < batch.images.size(); ++i) batch.images.data()[i] = uniform01(rng);
        batch.labels = Matrix<double>::Zero(5, 2);
        for (Eigen::Index r = 0; r < 5; ++r) batch.labels(r, static_cast<Eigen::Index>(uniform_index(rng, 2))) = 1.0;
        BldConfig cfg;
        cfg.alpha_w = 0.05;
        cfg.lambda = uniform(rng, 0.5, 4.0);
        cfg.augment.transforms = 2;
        cfg.augment.image_side = 4;
        cfg.augment.policy.max_shift = 1;
        const auto warm = warm_up_stage(net, batch, cfg, rng);
        const auto heads = bld::detail::with_current<double>(warm.bank.tasks, 3);
        auto gd = replica_means<double>(
                      net, batch, warm.bank.transforms, 4, heads, 1,
                      [&](std::size_t, std::size_t k) { return bld::detail::distillation_loss(warm.bank, k, cfg.tau); },
                      [](std::size_t, const ForwardPass<double>&) {})
                      .front()
                      .grads;
        const auto before = layer_norms(gd);
        const auto after = layer_norms(balance_distillation_gradient(gd, warm.gw_norms.values, cfg.lambda));
        for (std::size_t l = 0; l < before.size(); ++l) {
            if (before[l] > 1e-12) {
                const double target = cfg.lambda * warm.gw_norms.values[l];
                if (target == 0.0) {
                    CHECK(after[l] == 0.0);
                } else {
                    worst = std::max(worst, std::abs(after[l] - target) / target);
                }
                ++layers;
            } else {
                CHECK(after[l] == 0.0);
                ++zero_layers;
            }
        }
    }
    note(fmt("max relative deviation %.3e over %.0f layers; %.0f zero-norm layers", worst, static_cast<double>(layers),
             static_cast<double>(zero_layers)));
    CHECK(zero_layers > 0);
    CHECK(worst < 1e-6);
}

TEST_CASE("criterion 5: nothing but parameters, config and rng crosses a batch boundary", "[acceptance]") {
    const auto cfg = load_config(kConfigs / "synthetic_5.ini");
    const auto data = prepare_tasks(cfg.data, nullptr, nullptr, cfg.seeds.front());
    Rng init = make_rng(1, 0);
    auto learner = make_learner(cfg, MultiHeadNet<Scalar>(extractor_spec(cfg, data.train->dim()), init), 1);
    std::size_t boundaries = 0, clean = 0;
    learner->on_batch_boundary([&](const Learner<Scalar>& l) {
        ++boundaries;
        clean += audit::inter_batch_inventory(l).parameters_only();
    });
    for (const auto& task : data.train_tasks) {
        learner->begin_task(task);
        TaskStream<Scalar> stream(*data.train, task, cfg.bld.batch_size, 1);
        learner->learn_task(stream);
    }
    note(fmt("%.0f of %.0f boundaries clean", static_cast<double>(clean), static_cast<double>(boundaries)));
    CHECK(boundaries > 0);
    CHECK(clean == boundaries);

    const LearnerFactory leaky = [](const ExperimentConfig& c, MultiHeadNet<Scalar> net, std::uint64_t seed)
        -> std::unique_ptr<Learner<Scalar>> { return std::make_unique<LeakyBld>(std::move(net), c.bld, seed); };
    CHECK(cli({"run", (kConfigs / "synthetic_5.ini").string()}, leaky) == 3);
    CHECK(cli({"audit", (kConfigs / "synthetic_5.ini").string(), "--probe"}, leaky) == 3);
}

TEST_CASE("criterion 6: augmentation replay is bit-identical and descriptors are small", "[acceptance]") {
    Rng rng = make_rng(6, 0xac06);
    const auto policy = augment::AugmentPolicy::digits();
    std::size_t identical = 0;
    std::vector<float> image(784);
    for (int i = 0; i < 10000; ++i) {
        for (auto& p : image) p = static_cast<float>(uniform01(rng));
        const auto set = augment::sample_descriptors(2, rng, policy);
        const auto& d = set.descriptors[1];
        const auto warm = augment::apply<float>(image, 28, d);
        const auto stored = augment::TransformSet::deserialize(set.serialize());
        identical += warm == augment::apply<float>(image, 28, stored.descriptors[1]);
    }
    CHECK(identical == 10000u);

    // Inside the engine: inputs seen by the joint stage equal those of the warm-up.
    Rng net_rng = make_rng(6, 1);
    const std::size_t widths[] = {16};
    MultiHeadNet<float> net(mlp_spec(784, widths), net_rng);
    net.spawn_head(1, {0, 1}, net_rng);
    net.spawn_head(2, {2, 3}, net_rng);
    Batch<float> batch;
    batch.task_index = 2;
    batch.images = Matrix<float>(20, 784);
    for (Eigen::Index i = 0; i < batch.images.size(); ++i) batch.images.data()[i] = static_cast<float>(uniform01(rng));
    batch.labels = Matrix<float>::Zero(20, 2);
    batch.labels.col(0).setOnes();
    BldConfig cfg;
    cfg.augment.image_side = 28;
    const auto warm = warm_up_stage(net, batch, cfg, rng);
    std::vector<Matrix<float>> seen;
    const int heads[] = {2};
    (void)replica_means<float>(
        net, batch, warm.bank.transforms, 28, heads, 1, [&](std::size_t, std::size_t) { return new_task_loss(batch); },
        [&](std::size_t, const ForwardPass<float>& fp) { seen.push_back(fp.outputs.front()); });
    REQUIRE(seen.size() == 50u);
    std::size_t same = 0;
    for (std::size_t k = 0; k < 50; ++k) {
        same += seen[k] == augment::apply_batch<float>(batch.images, 28, warm.bank.transforms.descriptors[k]);
    }
    CHECK(same == 50u);

    const double batch_bytes = 20.0 * 784.0 * sizeof(float);
    const auto bytes = static_cast<double>(warm.bank.transforms.byte_size());
    note(fmt("descriptors %.0f B = %.3f%% of %.0f B of batch images", bytes, 100.0 * bytes / batch_bytes, batch_bytes));
    CHECK(bytes < 0.01 * batch_bytes);
}

TEST_CASE("criterion 7: first task of BLD is plain SGD with steps (alpha_w, alpha_j, alpha_j)", "[acceptance]") {
    if (!mnist_available()) FAIL("MNIST missing: run tools/fetch_mnist.sh");
    auto s = small_mnist(1000, 7);
    s.cfg.bld.mode = BldMode::full;
    s.cfg.bld.joint_iterations = 2;
    BldLearner<Scalar> bld(fresh_net(s.cfg, 7), s.cfg.bld, 7);
    FinetuneConfig sgd = s.cfg.finetune;
    sgd.step_rates = {s.cfg.bld.alpha_w, s.cfg.bld.alpha_j, s.cfg.bld.alpha_j};
    FinetuneLearner<Scalar> plain(fresh_net(s.cfg, 7), sgd, 7);
    const auto a = trajectory(bld, s.data, s.cfg.bld.batch_size, 7, 1);
    const auto b = trajectory(plain, s.data, s.cfg.bld.batch_size, 7, 1);
    note(fmt("%.0f parameter snapshots compared", static_cast<double>(a.size())));
    REQUIRE(a.size() == b.size());
    CHECK(a.size() > 50u);
    std::size_t equal = 0;
    for (std::size_t i = 0; i < a.size(); ++i) equal += a[i] == b[i];
    CHECK(equal == a.size());
}

TEST_CASE("criterion 8: BLD forgets less than Finetune on split-MNIST", "[acceptance]") {
    if (!mnist_available()) FAIL("MNIST missing: run tools/fetch_mnist.sh");
    const auto t0 = std::chrono::steady_clock::now();
    const auto two = kConfigs / "desk_split_mnist_2.ini";
    const auto& bld2 = cached_run(two, "bld");
    const auto& ft2 = cached_run(two, "finetune");
    REQUIRE(bld2.seeds == 3);
    REQUIRE(ft2.seeds == 3);
    const double two_task_seconds = seconds_since(t0);
    note(fmt("2 tasks: Avg %+.2f, T0 %+.2f (BLD - Finetune), %.0f s", bld2.average - ft2.average,
             bld2.accuracy[0] - ft2.accuracy[0], two_task_seconds));
    CHECK(bld2.average >= ft2.average + 3.0);
    CHECK(bld2.accuracy[0] >= ft2.accuracy[0] + 3.0);
    CHECK(two_task_seconds <= 15 * 60);

    const auto five = kConfigs / "desk_split_mnist_5.ini";
    const auto& bld5 = cached_run(five, "bld");
    const auto& ft5 = cached_run(five, "finetune");
    const auto& l25 = cached_run(five, "batch_l2");
    note(fmt("5 tasks: BLD %.2f, Finetune %.2f, batch L2 %.2f (L2 not gated)", bld5.average, ft5.average, l25.average));
    CHECK(bld5.average > ft5.average);
}

TEST_CASE("criterion 9: full BLD is at least as good as its ablations", "[acceptance]") {
    if (!mnist_available()) FAIL("MNIST missing: run tools/fetch_mnist.sh");
    const auto five = kConfigs / "desk_split_mnist_5.ini";
    const auto& full = cached_run(five, "bld");
    const auto& nb = cached_run(five, "bld_no_balancing");
    const auto& alt = cached_run(five, "bld_alternated");
    note(fmt("Full %.2f, No-balancing %.2f, Alternated %.2f", full.average, nb.average, alt.average));
    CHECK(full.average >= nb.average);
    CHECK(full.average >= alt.average);
}

TEST_CASE("criterion 10: baseline and ablation equivalences are bit-exact", "[acceptance]") {
    if (!mnist_available()) FAIL("MNIST missing: run tools/fetch_mnist.sh");
    auto s = small_mnist(300, 10);
    const std::size_t B = s.cfg.bld.batch_size;

    LwfConfig single = s.cfg.lwf;
    single.offline = false;
    single.batch_size = B;
    single.learning_rate = s.cfg.bld.alpha_j;
    LwfConfig offline = single;
    offline.offline = true;
    offline.epochs = 1;
    offline.shuffle = false;
    LwfLearner<Scalar> lwf_a(fresh_net(s.cfg, 10), single, 10);
    LwfLearner<Scalar> lwf_b(fresh_net(s.cfg, 10), offline, 10);
    CHECK(trajectory(lwf_a, s.data, B, 10) == trajectory(lwf_b, s.data, B, 10));

    BatchL2Config l2 = s.cfg.batch_l2;
    l2.l2_weight = 0.0;
    FinetuneConfig ft = s.cfg.finetune;
    ft.step_rates.assign(1, l2.alpha_w);
    ft.step_rates.insert(ft.step_rates.end(), l2.joint_iterations, l2.alpha_j);
    BatchL2Learner<Scalar> l2_learner(fresh_net(s.cfg, 10), l2, 10);
    FinetuneLearner<Scalar> ft_learner(fresh_net(s.cfg, 10), ft, 10);
    CHECK(trajectory(l2_learner, s.data, B, 10) == trajectory(ft_learner, s.data, B, 10));

    BldConfig nb = s.cfg.bld;
    nb.mode = BldMode::no_balancing;
    BldLearner<Scalar> engine(fresh_net(s.cfg, 10), nb, 10);
    ForcedRatioBld forced(fresh_net(s.cfg, 10), nb, 10);
    const auto a = trajectory(engine, s.data, B, 10);
    CHECK(a == trajectory(forced, s.data, B, 10));
    BldConfig full = nb;
    full.mode = BldMode::full;
    BldLearner<Scalar> balanced(fresh_net(s.cfg, 10), full, 10);
    CHECK(a != trajectory(balanced, s.data, B, 10));
    note(fmt("%.0f snapshots per trajectory", static_cast<double>(a.size())));
}
