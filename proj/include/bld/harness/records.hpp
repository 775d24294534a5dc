// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bld/audit/memory.hpp"
#include "bld/common/errors.hpp"
#include "bld/harness/experiment.hpp"

namespace bld::harness {

using nlohmann::json;

inline json to_json(const audit::MemoryReport& m) {
    return {{"method", m.method},
            {"intra_batch_bytes", m.intra_batch_bytes},
            {"inter_batch_bytes", m.inter_batch_bytes},
            {"data_storage_bytes", m.data_storage_bytes},
            {"descriptor_bytes", m.descriptor_bytes},
            {"norm_bytes", m.norm_bytes},
            {"constraint1_violated", m.constraint1_violated},
            {"constraint2_violated", m.constraint2_violated},
            {"note", m.note}};
}

inline audit::MemoryReport memory_from_json(const json& j) {
    audit::MemoryReport m;
    m.method = j.at("method").get<std::string>();
    m.intra_batch_bytes = j.at("intra_batch_bytes").get<std::uint64_t>();
    m.inter_batch_bytes = j.at("inter_batch_bytes").get<std::uint64_t>();
    m.data_storage_bytes = j.at("data_storage_bytes").get<std::uint64_t>();
    m.descriptor_bytes = j.value("descriptor_bytes", std::uint64_t{0});
    m.norm_bytes = j.value("norm_bytes", std::uint64_t{0});
    m.constraint1_violated = j.at("constraint1_violated").get<bool>();
    m.constraint2_violated = j.at("constraint2_violated").get<bool>();
    m.note = j.value("note", std::string{});
    return m;
}

/// One record per (seed, task) of a successful run.
inline std::vector<json> run_records(const RunMetrics& r) {
    std::vector<json> out;
    for (std::size_t t = 0; t < r.accuracy.size(); ++t) {
        json j = to_json(r.memory);
        j["method"] = r.method;
        j["seed"] = r.seed;
        j["task"] = t;
        j["tasks"] = r.accuracy.size();
        j["accuracy"] = r.accuracy[t];
        j["wall_seconds"] = r.wall_seconds;
        out.push_back(std::move(j));
    }
    return out;
}

inline void append_records(const std::string& path, const std::vector<RunMetrics>& runs) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw ConfigError("cannot write records to " + path);
    for (const auto& r : runs) {
        if (!r.ok()) continue;
        for (const auto& j : run_records(r)) out << j.dump() << '\n';
    }
}

/// Rebuilds per-seed metrics from JSONL records.
inline std::vector<RunMetrics> read_records(std::istream& in) {
    std::map<std::pair<std::string, std::uint64_t>, RunMetrics> runs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
            auto& r = runs[{j.at("method").get<std::string>(), j.at("seed").get<std::uint64_t>()}];
            r.method = j.at("method").get<std::string>();
            r.seed = j.at("seed").get<std::uint64_t>();
            const auto task = j.at("task").get<std::size_t>();
            const auto tasks = j.at("tasks").get<std::size_t>();
            if (task >= tasks) throw FormatError("task index beyond task count");
            r.accuracy.resize(tasks, 0.0);
            r.accuracy[task] = j.at("accuracy").get<double>();
            r.wall_seconds = j.value("wall_seconds", 0.0);
            r.memory = memory_from_json(j);
            r.memory.method = r.method;
        } catch (const json::exception& e) {
            throw FormatError("record line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    std::vector<RunMetrics> out;
    for (auto& [_, r] : runs) {
        r.average = std::accumulate(r.accuracy.begin(), r.accuracy.end(), 0.0) / static_cast<double>(r.accuracy.size());
        out.push_back(std::move(r));
    }
    return out;
}

/// Groups runs by method, preserving first-seen order.
inline std::vector<Aggregate> aggregate_by_method(const std::vector<RunMetrics>& runs) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<RunMetrics>> groups;
    for (const auto& r : runs) {
        if (!groups.count(r.method)) order.push_back(r.method);
        groups[r.method].push_back(r);
    }
    std::vector<Aggregate> out;
    for (const auto& m : order) out.push_back(aggregate(groups[m]));
    return out;
}

inline json to_json(const Aggregate& a) {
    return {{"method", a.method},      {"seeds", a.seeds},           {"accuracy", a.accuracy},
            {"average", a.average},    {"average_std", a.average_std}, {"memory", to_json(a.memory)}};
}

inline Aggregate aggregate_from_json(const json& j) {
    Aggregate a;
    a.method = j.at("method").get<std::string>();
    a.seeds = j.at("seeds").get<std::size_t>();
    a.accuracy = j.at("accuracy").get<std::vector<double>>();
    a.average = j.at("average").get<double>();
    a.average_std = j.at("average_std").get<double>();
    a.memory = memory_from_json(j.at("memory"));
    return a;
}

struct Tables {
    std::string text;
    std::string json;
};

namespace detail {

inline std::string format_bytes(std::uint64_t b) {
    char buf[32];
    if (b == 0) return "0";
    if (b >= 1'000'000) {
        std::snprintf(buf, sizeof buf, "%.1fMB", static_cast<double>(b) / 1e6);
    } else if (b >= 1'000) {
        std::snprintf(buf, sizeof buf, "%.0fkB", static_cast<double>(b) / 1e3);
    } else {
        std::snprintf(buf, sizeof buf, "%lluB", static_cast<unsigned long long>(b));
    }
    return buf;
}

inline std::string pad(const std::string& s, std::size_t w, bool left = false) {
    if (s.size() >= w) return s;
    return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
}

}  // namespace detail

/// Aligned accuracy/memory table (best Avg. marked with '*') and the same
/// values as JSON.
inline Tables emit_tables(const std::vector<Aggregate>& rows) {
    if (rows.empty()) throw ArgumentError("emit_tables: nothing to report");
    std::size_t tasks = 0;
    std::size_t name_w = 6;
    for (const auto& r : rows) {
        tasks = std::max(tasks, r.accuracy.size());
        name_w = std::max(name_w, r.method.size());
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].average > rows[best].average) best = i;
    }

    std::ostringstream os;
    os << detail::pad("Method", name_w, true);
    for (std::size_t t = 0; t < tasks; ++t) os << detail::pad("T" + std::to_string(t), 8);
    os << detail::pad("Avg.", 9) << detail::pad("Intra-batch", 13) << detail::pad("Inter-batch", 13)
       << detail::pad("Data Storage", 14) << '\n';
    char buf[32];
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        os << detail::pad(r.method, name_w, true);
        for (std::size_t t = 0; t < tasks; ++t) {
            if (t < r.accuracy.size()) {
                std::snprintf(buf, sizeof buf, "%.1f", r.accuracy[t]);
                os << detail::pad(buf, 8);
            } else {
                os << detail::pad("-", 8);
            }
        }
        std::snprintf(buf, sizeof buf, "%.1f%s", r.average, i == best && rows.size() > 1 ? "*" : " ");
        os << detail::pad(buf, 9) << detail::pad(detail::format_bytes(r.memory.intra_batch_bytes), 13)
           << detail::pad(detail::format_bytes(r.memory.inter_batch_bytes), 13)
           << detail::pad(detail::format_bytes(r.memory.data_storage_bytes), 14) << '\n';
    }

    json j = json::array();
    for (const auto& r : rows) j.push_back(to_json(r));
    return {os.str(), j.dump(2)};
}

inline std::vector<Aggregate> parse_tables_json(const std::string& text) {
    std::vector<Aggregate> out;
    try {
        for (const auto& j : json::parse(text)) out.push_back(aggregate_from_json(j));
    } catch (const json::exception& e) {
        throw FormatError(std::string("tables json: ") + e.what());
    }
    return out;
}

/// Memory table with byte-exact columns.
inline std::string memory_table(const std::vector<audit::MemoryReport>& reports) {
    std::ostringstream os;
    std::size_t w = 6;
    for (const auto& r : reports) w = std::max(w, r.method.size());
    os << detail::pad("Method", w, true) << detail::pad("Intra-batch", 14) << detail::pad("Inter-batch", 14)
       << detail::pad("Data Storage", 14) << detail::pad("Descriptors", 13) << detail::pad("(1)", 5)
       << detail::pad("(2)", 5) << '\n';
    for (const auto& r : reports) {
        os << detail::pad(r.method, w, true) << detail::pad(std::to_string(r.intra_batch_bytes), 14)
           << detail::pad(std::to_string(r.inter_batch_bytes), 14) << detail::pad(std::to_string(r.data_storage_bytes), 14)
           << detail::pad(std::to_string(r.descriptor_bytes), 13) << detail::pad(r.constraint1_violated ? "x" : "-", 5)
           << detail::pad(r.constraint2_violated ? "x" : "-", 5) << '\n';
    }
    return os.str();
}

}  // namespace bld::harness
