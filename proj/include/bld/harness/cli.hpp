// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bld/audit/memory.hpp"
#include "bld/common/errors.hpp"
#include "bld/harness/config.hpp"
#include "bld/harness/experiment.hpp"
#include "bld/harness/gradcheck_suite.hpp"
#include "bld/harness/records.hpp"

namespace bld::harness {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitConstraint = 3, kExitNumeric = 4 };

inline int exit_code_of(FailureKind k) {
    switch (k) {
        case FailureKind::none: return kExitOk;
        case FailureKind::config: return kExitConfig;
        case FailureKind::constraint: return kExitConstraint;
        case FailureKind::numeric: return kExitNumeric;
        case FailureKind::other: return kExitFailure;
    }
    return kExitFailure;
}

/// Worst exit code over a set of runs; constraint violations dominate.
inline int exit_code_of(const std::vector<RunMetrics>& runs) {
    int code = kExitOk;
    for (const auto& r : runs) {
        const int c = exit_code_of(r.failure);
        if (c == kExitConstraint || (code != kExitConstraint && c > code)) code = c;
    }
    return code;
}

namespace detail {

inline const char* kReportedMethods[] = {"bld", "finetune", "batch_l2", "lwf_single_pass", "lwf_offline"};

inline std::vector<audit::MemoryReport> reference_reports(const std::string& dataset) {
    std::vector<audit::MemoryReport> out;
    const auto shape = audit::paper_shape(dataset);
    for (const char* m : kReportedMethods) out.push_back(audit::method_overhead(m, shape));
    return out;
}

/// Closed-form shape of the last task of the configured run.
inline audit::ShapeParams desk_shape(const ExperimentConfig& cfg, const TaskSequence& data, const MultiHeadNet<Scalar>& net) {
    audit::ShapeParams s;
    s.batch_size = cfg.bld.batch_size;
    s.transforms = cfg.bld.augment.transforms;
    for (std::size_t t = 0; t + 1 < data.train_tasks.size(); ++t) s.old_class_counts.push_back(data.train_tasks[t].classes.size());
    s.bytes_per_float = sizeof(Scalar);
    s.param_count = net.params().param_count();
    s.layer_count = net.params().num_blocks();
    s.samples_per_task = data.train_tasks.back().sample_indices.size();
    s.bytes_per_sample = (data.train->dim() + data.train_tasks.back().classes.size()) * sizeof(Scalar);
    return s;
}

inline void report_failures(const std::vector<RunMetrics>& runs, std::ostream& err) {
    for (const auto& r : runs) {
        if (!r.ok()) err << "seed " << r.seed << " failed: " << r.error << '\n';
    }
}

}  // namespace detail

/// Entry point of the command line tool. `factory` chooses the learner for
/// each run; tests substitute it to inject faulty learners.
inline int run_cli(int argc, char** argv, const LearnerFactory& factory = make_learner, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
    CLI::App app{"Batch-level distillation for memory-constrained online continual learning"};
    app.require_subcommand(1);

    std::string config_path;
    std::string output_override;
    std::vector<std::uint64_t> seeds_override;
    std::string method_override;
    auto* run = app.add_subcommand("run", "train and evaluate every seed of a config");
    run->add_option("config", config_path, "INI config file")->required();
    run->add_option("--output", output_override, "append JSONL records here");
    run->add_option("--seeds", seeds_override, "override experiment.seeds")->delimiter(',');
    run->add_option("--method", method_override, "override experiment.method");

    std::string audit_config;
    std::string audit_dataset;
    bool probe = false;
    bool audit_json = false;
    auto* aud = app.add_subcommand("audit", "memory overhead report");
    aud->add_option("config", audit_config, "INI config file")->required();
    aud->add_option("--dataset", audit_dataset, "reference shapes: mnist, cifar10, svhn or all");
    aud->add_flag("--probe", probe, "also run the first seed with batch-boundary inventory checks");
    aud->add_flag("--json", audit_json, "machine-readable output");

    std::vector<std::string> record_files;
    std::string tables_json;
    auto* tab = app.add_subcommand("tables", "aggregate JSONL records into accuracy/memory tables");
    tab->add_option("records", record_files, "JSONL record files")->required();
    tab->add_option("--json", tables_json, "also write the aggregate as JSON");

    std::uint64_t gc_seeds = 5;
    double gc_tol = 1e-4;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every loss gradient");
    gc->add_option("--seeds", gc_seeds, "number of seeded nets");
    gc->add_option("--tolerance", gc_tol, "maximum relative error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*run) {
            auto cfg = load_config(config_path);
            if (!seeds_override.empty()) cfg.seeds = seeds_override;
            if (!method_override.empty()) {
                cfg.method = method_override;
                cfg.bld.mode = method_override == "bld_no_balancing" ? BldMode::no_balancing
                               : method_override == "bld_alternated" ? BldMode::alternated
                                                                     : BldMode::full;
                cfg.lwf.offline = method_override == "lwf_offline";
                cfg.validate();
            }
            if (!output_override.empty()) cfg.output = output_override;
            const auto result = run_experiment(cfg, factory);
            detail::report_failures(result.runs, err);
            if (!cfg.output.empty()) append_records(cfg.output, result.runs);
            if (result.summary.seeds > 0) out << emit_tables({result.summary}).text;
            return exit_code_of(result.runs);
        }
        if (*aud) {
            const auto cfg = load_config(audit_config);
            const std::string ds = audit_dataset.empty() ? cfg.audit_dataset : audit_dataset;
            std::vector<std::string> datasets;
            if (ds == "all") {
                for (const auto& p : audit::kPaperPresets) datasets.emplace_back(p.dataset);
            } else {
                datasets.push_back(ds);
            }
            nlohmann::json j = nlohmann::json::object();
            for (const auto& d : datasets) {
                const auto reports = detail::reference_reports(d);
                if (audit_json) {
                    for (const auto& r : reports) j["reference"][d].push_back(to_json(r));
                } else {
                    out << "reference shapes: " << d << " (5 tasks x 2 classes, |B|=20, K=50, 11.2M parameters)\n"
                        << memory_table(reports) << '\n';
                }
            }
            if (!probe) {
                if (audit_json) out << j.dump(2) << '\n';
                return kExitOk;
            }
            cfg.require_inputs();
            std::shared_ptr<const Dataset> train, test;
            if (cfg.data.source == "idx") {
                train = std::make_shared<const Dataset>(load_idx(cfg.data.train_images, cfg.data.train_labels));
                test = std::make_shared<const Dataset>(load_idx(cfg.data.test_images, cfg.data.test_labels));
            }
            auto probe_cfg = cfg;
            probe_cfg.audit_boundaries = true;
            const auto data = prepare_tasks(cfg.data, train, test, cfg.seeds.front());
            std::optional<audit::ShapeParams> shape;
            SeedHooks hooks;
            hooks.after_task = [&](const Learner<Scalar>& l) { shape = detail::desk_shape(probe_cfg, data, l.net()); };
            const auto m = run_seed(probe_cfg, data, cfg.seeds.front(), factory, hooks);
            if (!m.ok()) {
                err << "audit probe failed: " << m.error << '\n';
                return exit_code_of(m.failure);
            }
            const auto closed = audit::method_overhead(m.method, *shape);
            if (audit_json) {
                j["probe"] = {{"measured", to_json(m.memory)}, {"closed_form", to_json(closed)}};
                out << j.dump(2) << '\n';
            } else {
                auto measured = m.memory;
                measured.method += " (measured)";
                auto predicted = closed;
                predicted.method += " (closed form)";
                out << "probe run, seed " << m.seed << ": inventory clean at every batch boundary\n"
                    << memory_table({predicted, measured});
            }
            return kExitOk;
        }
        if (*tab) {
            std::vector<RunMetrics> runs;
            for (const auto& f : record_files) {
                std::ifstream in(f);
                if (!in) throw ConfigError("cannot open records file " + f);
                auto r = read_records(in);
                runs.insert(runs.end(), r.begin(), r.end());
            }
            const auto tables = emit_tables(aggregate_by_method(runs));
            out << tables.text;
            if (!tables_json.empty()) {
                std::ofstream o(tables_json);
                if (!o) throw ConfigError("cannot write " + tables_json);
                o << tables.json << '\n';
            }
            return kExitOk;
        }
        if (*gc) {
            bool pass = true;
            for (const auto& c : run_gradcheck_suite(1, gc_seeds)) {
                const bool ok = c.report.max_rel_error < gc_tol;
                pass = pass && ok;
                char line[160];
                std::snprintf(line, sizeof line, "%-14s seed %-3llu checked %-4zu max rel %.3e  %s\n", c.name.c_str(),
                              static_cast<unsigned long long>(c.seed), c.report.checked, c.report.max_rel_error,
                              ok ? "ok" : "FAIL");
                out << line;
            }
            return pass ? kExitOk : kExitNumeric;
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ConstraintViolation& e) {
        err << "constraint violation: " << e.what() << '\n';
        return kExitConstraint;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitFailure;
}

}  // namespace bld::harness
