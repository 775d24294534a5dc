// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "bld/audit/memory.hpp"
#include "bld/baselines/batch_l2.hpp"
#include "bld/baselines/finetune.hpp"
#include "bld/baselines/lwf.hpp"
#include "bld/common/errors.hpp"
#include "bld/engine/bld.hpp"

namespace bld::harness {

/// Where the task sequence comes from.
struct DataConfig {
    std::string source = "idx";  // "idx" or "synthetic"
    std::string train_images, train_labels, test_images, test_labels;
    std::size_t n_tasks = 2;
    /// Cap on training samples per task (0 keeps them all).
    std::size_t max_train_per_task = 0;
    /// Seed of the class split; unset means the run seed.
    std::optional<std::uint64_t> split_seed;

    std::size_t synthetic_classes_per_task = 2;
    std::size_t synthetic_samples = 250;  // per class, before the 20% test hold-out
    std::size_t synthetic_dim = 20;
    double synthetic_separation = 10.0;
};

/// Everything one `run` needs.
struct ExperimentConfig {
    DataConfig data;
    std::string method = "bld";
    std::vector<std::uint64_t> seeds{1};
    std::vector<std::size_t> hidden{256, 128};
    std::string output;  // JSONL records; empty disables
    bool audit_boundaries = true;  // inventory check after every batch
    bool diagnostics = false;

    BldConfig bld;
    FinetuneConfig finetune;
    BatchL2Config batch_l2;
    LwfConfig lwf;
    std::string audit_dataset = "mnist";  // reference preset used by `audit`

    void validate() const {
        if (seeds.empty()) throw ConfigError("experiment.seeds must not be empty");
        if (!audit::is_known_method(method)) throw ConfigError("unknown method '" + method + "'");
        if (data.source != "idx" && data.source != "synthetic") {
            throw ConfigError("data.source must be 'idx' or 'synthetic', got '" + data.source + "'");
        }
        if (data.n_tasks < 1) throw ConfigError("data.n_tasks must be >= 1");
        if (hidden.empty()) throw ConfigError("experiment.hidden needs at least one layer");
        bld.validate();
        finetune.validate();
        batch_l2.validate();
        lwf.validate();
    }

    /// Paths are checked when a run starts, not at parse time.
    void require_inputs() const {
        if (data.source != "idx") return;
        for (const auto* p : {&data.train_images, &data.train_labels, &data.test_images, &data.test_labels}) {
            if (p->empty()) throw ConfigError("data: idx source needs train/test image and label paths");
            if (!std::filesystem::exists(*p)) throw ConfigError("data file does not exist: " + *p);
        }
    }
};

namespace detail {

using boost::property_tree::ptree;

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& key) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        std::istringstream is(item.substr(b));
        T v{};
        if (!(is >> v)) throw ConfigError(key + ": cannot parse list item '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
}

class Reader {
public:
    Reader(const ptree& tree, std::filesystem::path base) : tree_(tree), base_(std::move(base)) {}

    template <typename T>
    void get(const std::string& key, T& into) const {
        const auto v = tree_.get_optional<std::string>(key);
        if (!v) return;
        try {
            if constexpr (std::is_same_v<T, bool>) {
                into = parse_bool(*v, key);
            } else {
                into = tree_.get<T>(key);
            }
        } catch (const boost::property_tree::ptree_error&) {
            throw ConfigError(key + ": cannot parse '" + *v + "'");
        }
    }

    template <typename T>
    void list(const std::string& key, std::vector<T>& into) const {
        if (const auto v = tree_.get_optional<std::string>(key)) into = parse_list<T>(*v, key);
    }

    /// Path values: an environment override BLD_<SECTION>_<KEY> wins; relative
    /// paths resolve against the config file's directory.
    void path(const std::string& key, std::string& into) const {
        std::string env = "BLD_";
        for (char c : key) env += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        std::string value;
        if (const char* e = std::getenv(env.c_str()); e != nullptr && *e != '\0') {
            value = e;
        } else if (const auto v = tree_.get_optional<std::string>(key)) {
            value = *v;
        } else {
            return;
        }
        std::filesystem::path p(value);
        if (p.is_relative()) p = base_ / p;
        into = p.lexically_normal().string();
    }

private:
    static bool parse_bool(const std::string& s, const std::string& key) {
        if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
        if (s == "false" || s == "0" || s == "no" || s == "off") return false;
        throw ConfigError(key + ": expected a boolean, got '" + s + "'");
    }

    const ptree& tree_;
    std::filesystem::path base_;
};

inline const char* kKnownSections[] = {"data", "experiment", "bld", "finetune", "batch_l2", "lwf", "augment", "audit"};

}  // namespace detail

/// Parses INI text. `base_dir` anchors relative paths.
inline ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".") {
    detail::ptree tree;
    try {
        std::istringstream is(text);
        boost::property_tree::ini_parser::read_ini(is, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.message() + " at line " + std::to_string(e.line()));
    }
    for (const auto& [section, _] : tree) {
        bool known = false;
        for (const char* s : detail::kKnownSections) known = known || section == s;
        if (!known) throw ConfigError("config: unknown section [" + section + "]");
    }

    ExperimentConfig c;
    const detail::Reader r(tree, base_dir);

    r.get("data.source", c.data.source);
    r.path("data.train_images", c.data.train_images);
    r.path("data.train_labels", c.data.train_labels);
    r.path("data.test_images", c.data.test_images);
    r.path("data.test_labels", c.data.test_labels);
    r.get("data.n_tasks", c.data.n_tasks);
    r.get("data.max_train_per_task", c.data.max_train_per_task);
    if (const auto s = tree.get_optional<std::uint64_t>("data.split_seed")) c.data.split_seed = *s;
    r.get("data.synthetic_classes_per_task", c.data.synthetic_classes_per_task);
    r.get("data.synthetic_samples", c.data.synthetic_samples);
    r.get("data.synthetic_dim", c.data.synthetic_dim);
    r.get("data.synthetic_separation", c.data.synthetic_separation);

    r.get("experiment.method", c.method);
    r.list("experiment.seeds", c.seeds);
    r.list("experiment.hidden", c.hidden);
    r.path("experiment.output", c.output);
    r.get("experiment.diagnostics", c.diagnostics);

    // Shared augmentation settings.
    AugmentConfig aug;
    aug.policy = c.data.source == "synthetic" ? augment::AugmentPolicy::features_only() : augment::AugmentPolicy::digits();
    if (c.data.source == "synthetic") aug.policy.pixel_jitter = false;
    r.get("augment.transforms", aug.transforms);
    r.get("augment.rotation", aug.policy.rotation);
    r.get("augment.max_rotation_deg", aug.policy.max_rotation_deg);
    r.get("augment.shift", aug.policy.shift);
    r.get("augment.max_shift", aug.policy.max_shift);
    r.get("augment.pixel_jitter", aug.policy.pixel_jitter);
    r.get("augment.jitter_amplitude", aug.policy.jitter_amplitude);
    r.get("augment.horizontal_flip", aug.policy.horizontal_flip);

    std::size_t batch_size = 20;
    r.get("experiment.batch_size", batch_size);

    auto& b = c.bld;
    b.augment = aug;
    b.batch_size = batch_size;
    r.get("bld.alpha_j", b.alpha_j);
    b.alpha_w = 1e-2 * b.alpha_j;
    r.get("bld.alpha_w", b.alpha_w);
    r.get("bld.lambda", b.lambda);
    r.get("bld.tau", b.tau);
    r.get("bld.joint_iterations", b.joint_iterations);
    if (c.method == "bld_no_balancing") b.mode = BldMode::no_balancing;
    if (c.method == "bld_alternated") b.mode = BldMode::alternated;

    // Finetune defaults to the BLD step schedule so the two differ only in distillation.
    auto& f = c.finetune;
    f.augment = aug;
    f.batch_size = batch_size;
    f.step_rates.assign(1, b.alpha_w);
    f.step_rates.insert(f.step_rates.end(), b.joint_iterations, b.alpha_j);
    r.list("finetune.step_rates", f.step_rates);

    auto& l2 = c.batch_l2;
    l2.augment = aug;
    l2.batch_size = batch_size;
    l2.alpha_w = b.alpha_w;
    l2.alpha_j = b.alpha_j;
    l2.joint_iterations = b.joint_iterations;
    r.get("batch_l2.alpha_w", l2.alpha_w);
    r.get("batch_l2.alpha_j", l2.alpha_j);
    r.get("batch_l2.joint_iterations", l2.joint_iterations);
    r.get("batch_l2.l2_weight", l2.l2_weight);

    auto& lw = c.lwf;
    lw.offline = c.method == "lwf_offline";
    lw.learning_rate = b.alpha_j;
    lw.tau = b.tau;
    lw.batch_size = lw.offline ? 500 : batch_size;
    lw.epochs = lw.offline ? 10 : 1;
    lw.shuffle = lw.offline;
    r.get("lwf.learning_rate", lw.learning_rate);
    r.get("lwf.tau", lw.tau);
    r.get("lwf.distill_weight", lw.distill_weight);
    r.get("lwf.batch_size", lw.batch_size);
    r.get("lwf.epochs", lw.epochs);
    r.get("lwf.shuffle", lw.shuffle);

    r.get("audit.dataset", c.audit_dataset);
    r.get("audit.check_boundaries", c.audit_boundaries);

    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), file.has_parent_path() ? file.parent_path() : std::filesystem::path("."));
}

}  // namespace bld::harness
