#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "privpart/dataset.hpp"
#include "privpart/federation.hpp"
#include "privpart/metrics.hpp"
#include "privpart/nn.hpp"
#include "privpart/partition.hpp"
#include "privpart/rng.hpp"
#include "privpart/version.hpp"

namespace privpart {

// ---------------------------------------------------------------- logging

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

// PRIVPART_LOG=quiet|info|debug; anything else falls back to info.
inline LogLevel log_level() {
    static const LogLevel lvl = [] {
        const char* v = std::getenv("PRIVPART_LOG");
        if (v == nullptr) return LogLevel::Info;
        const std::string s(v);
        if (s == "quiet") return LogLevel::Quiet;
        if (s == "debug") return LogLevel::Debug;
        return LogLevel::Info;
    }();
    return lvl;
}

namespace detail {
inline std::mutex& log_mutex() {
    static std::mutex m;
    return m;
}
}  // namespace detail

inline void log_line(LogLevel min_level, const std::string& msg) {
    if (static_cast<int>(log_level()) < static_cast<int>(min_level)) return;
    const std::lock_guard<std::mutex> lock(detail::log_mutex());
    std::cerr << "[privpart] " << msg << '\n';
}

inline void log_info(const std::string& msg) { log_line(LogLevel::Info, msg); }
inline void log_debug(const std::string& msg) { log_line(LogLevel::Debug, msg); }

// ----------------------------------------------------------------- config

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string fusion_code(FusionMode fusion) {
    return fusion == FusionMode::Fused ? "F" : "S";
}

struct ExperimentConfig {
    std::string out_dir = "runs/default";
    std::vector<std::uint64_t> seeds = {42, 1337, 3407, 8711, 9370};
    FederationConfig fed;  // .seed is overwritten per cell
    OptimizerConfig opt;
    GeneratorConfig gen;
    std::vector<int> hidden = {16};
    MutualConfig mutual;
    bool mutual_enabled = true;
    int holdout_subject = kNumSubjects;
    bool write_dataset = true;
    std::vector<std::pair<PrivacyLevel, FusionMode>> partitions = default_partitions();
    std::vector<std::string> models = {"flat-dense", "token-pooling"};

    // every valid (level, fusion) pair
    static std::vector<std::pair<PrivacyLevel, FusionMode>> default_partitions() {
        return {{PrivacyLevel::Centralised, FusionMode::Fused},
                {PrivacyLevel::Subject, FusionMode::Fused},
                {PrivacyLevel::SubjectEnv, FusionMode::Fused},
                {PrivacyLevel::Centralised, FusionMode::Separated},
                {PrivacyLevel::Subject, FusionMode::Separated},
                {PrivacyLevel::SubjectEnv, FusionMode::Separated},
                {PrivacyLevel::SubjectEnvMod, FusionMode::Separated}};
    }

    void validate() const {
        if (out_dir.empty()) throw std::runtime_error("config: out_dir must not be empty");
        if (seeds.empty()) throw std::runtime_error("config: seeds must not be empty");
        for (std::size_t i = 0; i < seeds.size(); ++i)
            for (std::size_t j = i + 1; j < seeds.size(); ++j)
                if (seeds[i] == seeds[j])
                    throw std::runtime_error("config: duplicate seed " + std::to_string(seeds[i]));
        if (!fed.valid()) throw std::runtime_error("config: invalid federation settings");
        if (!opt.valid()) throw std::runtime_error("config: invalid optimizer settings");
        if (!gen.valid()) throw std::runtime_error("config: invalid generator settings");
        if (!mutual.valid()) throw std::runtime_error("config: invalid mutual settings");
        for (const int h : hidden)
            if (h < 1) throw std::runtime_error("config: hidden sizes must be >= 1");
        if (holdout_subject < 1 || holdout_subject > kNumSubjects)
            throw std::runtime_error("config: holdout_subject out of range");
        if (partitions.empty()) throw std::runtime_error("config: partitions must not be empty");
        for (std::size_t i = 0; i < partitions.size(); ++i) {
            const PartitionSpec spec{partitions[i].first, partitions[i].second, holdout_subject};
            if (!spec.valid())
                throw std::runtime_error("config: partitions[" + std::to_string(i) +
                                         "]: invalid level/fusion combination");
        }
        if (models.empty()) throw std::runtime_error("config: models must not be empty");
        for (const auto& m : models)
            if (m != "flat-dense" && m != "token-pooling")
                throw std::runtime_error("config: unknown model '" + m +
                                         "' (expected flat-dense or token-pooling)");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["out_dir"] = out_dir;
        j["seeds"] = seeds;
        j["rounds"] = fed.rounds;
        j["local_epochs"] = fed.local_epochs;
        j["client_fraction"] = fed.client_fraction;
        j["holdout_subject"] = holdout_subject;
        j["hidden"] = hidden;
        j["models"] = models;
        j["write_dataset"] = write_dataset;
        j["optimizer"] = {{"learning_rate", opt.learning_rate},
                          {"beta1", opt.beta1},
                          {"beta2", opt.beta2},
                          {"weight_decay", opt.weight_decay},
                          {"epsilon", opt.epsilon},
                          {"batch_size", opt.batch_size}};
        j["generator"] = {{"feature_width", gen.feature_width},
                          {"class_signal", gen.class_signal},
                          {"subject_shift_scale", gen.subject_shift_scale},
                          {"room_shift_scale", gen.room_shift_scale},
                          {"modality_transform_scale", gen.modality_transform_scale},
                          {"room_label_skew", gen.room_label_skew},
                          {"samples_per_cell", gen.samples_per_cell}};
        j["mutual"] = {{"enabled", mutual_enabled},
                       {"lambda_global", mutual.lambda_global},
                       {"lambda_group", mutual.lambda_group}};
        nlohmann::json parts = nlohmann::json::array();
        for (const auto& [level, fusion] : partitions)
            parts.push_back({{"level", level_name(level)}, {"fusion", fusion_name(fusion)}});
        j["partitions"] = parts;
        return j;
    }

    // Identifies the experiment itself; where the results land is not part of it.
    std::uint64_t config_hash() const {
        nlohmann::json j = to_json();
        j.erase("out_dir");
        return fnv1a64(j.dump());
    }

    static ExperimentConfig from_json(const nlohmann::json& root);

    static ExperimentConfig load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("config: cannot open " + path);
        nlohmann::json root;
        try {
            is >> root;
        } catch (const nlohmann::json::exception& ex) {
            throw std::runtime_error("config: " + path + " is not valid JSON: " + ex.what());
        }
        return from_json(root);
    }
};

namespace detail {

[[noreturn]] inline void cfg_fail(const std::string& path, const std::string& what) {
    throw std::runtime_error("config: " + path + ": " + what);
}

inline double cfg_number(const nlohmann::json& j, const std::string& path) {
    if (!j.is_number()) cfg_fail(path, "expected a number");
    return j.get<double>();
}

inline int cfg_int(const nlohmann::json& j, const std::string& path) {
    if (!j.is_number_integer()) cfg_fail(path, "expected an integer");
    return j.get<int>();
}

inline std::uint64_t cfg_u64(const nlohmann::json& j, const std::string& path) {
    if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0))
        cfg_fail(path, "expected a non-negative integer");
    return j.get<std::uint64_t>();
}

inline bool cfg_bool(const nlohmann::json& j, const std::string& path) {
    if (!j.is_boolean()) cfg_fail(path, "expected true or false");
    return j.get<bool>();
}

inline std::string cfg_string(const nlohmann::json& j, const std::string& path) {
    if (!j.is_string()) cfg_fail(path, "expected a string");
    return j.get<std::string>();
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& root) {
    using detail::cfg_bool;
    using detail::cfg_fail;
    using detail::cfg_int;
    using detail::cfg_number;
    using detail::cfg_string;
    using detail::cfg_u64;

    if (!root.is_object()) cfg_fail("$", "expected a JSON object");
    ExperimentConfig cfg;
    for (const auto& [key, val] : root.items()) {
        if (key == "out_dir") {
            cfg.out_dir = cfg_string(val, key);
        } else if (key == "seeds") {
            if (!val.is_array() || val.empty()) cfg_fail(key, "expected a non-empty array");
            cfg.seeds.clear();
            for (std::size_t i = 0; i < val.size(); ++i)
                cfg.seeds.push_back(cfg_u64(val[i], key + "[" + std::to_string(i) + "]"));
        } else if (key == "rounds") {
            cfg.fed.rounds = cfg_int(val, key);
        } else if (key == "local_epochs") {
            cfg.fed.local_epochs = cfg_int(val, key);
        } else if (key == "client_fraction") {
            cfg.fed.client_fraction = cfg_number(val, key);
        } else if (key == "holdout_subject") {
            cfg.holdout_subject = cfg_int(val, key);
        } else if (key == "hidden") {
            if (!val.is_array()) cfg_fail(key, "expected an array");
            cfg.hidden.clear();
            for (std::size_t i = 0; i < val.size(); ++i)
                cfg.hidden.push_back(cfg_int(val[i], key + "[" + std::to_string(i) + "]"));
        } else if (key == "models") {
            if (!val.is_array() || val.empty()) cfg_fail(key, "expected a non-empty array");
            cfg.models.clear();
            for (std::size_t i = 0; i < val.size(); ++i)
                cfg.models.push_back(cfg_string(val[i], key + "[" + std::to_string(i) + "]"));
        } else if (key == "write_dataset") {
            cfg.write_dataset = cfg_bool(val, key);
        } else if (key == "optimizer") {
            if (!val.is_object()) cfg_fail(key, "expected an object");
            for (const auto& [k2, v2] : val.items()) {
                const std::string p = key + "." + k2;
                if (k2 == "learning_rate") cfg.opt.learning_rate = cfg_number(v2, p);
                else if (k2 == "beta1") cfg.opt.beta1 = cfg_number(v2, p);
                else if (k2 == "beta2") cfg.opt.beta2 = cfg_number(v2, p);
                else if (k2 == "weight_decay") cfg.opt.weight_decay = cfg_number(v2, p);
                else if (k2 == "epsilon") cfg.opt.epsilon = cfg_number(v2, p);
                else if (k2 == "batch_size") cfg.opt.batch_size = cfg_int(v2, p);
                else cfg_fail(p, "unknown field");
            }
        } else if (key == "generator") {
            if (!val.is_object()) cfg_fail(key, "expected an object");
            for (const auto& [k2, v2] : val.items()) {
                const std::string p = key + "." + k2;
                if (k2 == "feature_width") cfg.gen.feature_width = cfg_int(v2, p);
                else if (k2 == "class_signal") cfg.gen.class_signal = cfg_number(v2, p);
                else if (k2 == "subject_shift_scale") cfg.gen.subject_shift_scale = cfg_number(v2, p);
                else if (k2 == "room_shift_scale") cfg.gen.room_shift_scale = cfg_number(v2, p);
                else if (k2 == "modality_transform_scale")
                    cfg.gen.modality_transform_scale = cfg_number(v2, p);
                else if (k2 == "room_label_skew") cfg.gen.room_label_skew = cfg_number(v2, p);
                else if (k2 == "samples_per_cell") cfg.gen.samples_per_cell = cfg_int(v2, p);
                else cfg_fail(p, "unknown field");
            }
        } else if (key == "mutual") {
            if (!val.is_object()) cfg_fail(key, "expected an object");
            for (const auto& [k2, v2] : val.items()) {
                const std::string p = key + "." + k2;
                if (k2 == "enabled") cfg.mutual_enabled = cfg_bool(v2, p);
                else if (k2 == "lambda_global") cfg.mutual.lambda_global = cfg_number(v2, p);
                else if (k2 == "lambda_group") cfg.mutual.lambda_group = cfg_number(v2, p);
                else cfg_fail(p, "unknown field");
            }
        } else if (key == "partitions") {
            if (!val.is_array() || val.empty()) cfg_fail(key, "expected a non-empty array");
            cfg.partitions.clear();
            for (std::size_t i = 0; i < val.size(); ++i) {
                const std::string p = key + "[" + std::to_string(i) + "]";
                if (!val[i].is_object()) cfg_fail(p, "expected an object");
                PrivacyLevel level = PrivacyLevel::Centralised;
                FusionMode fusion = FusionMode::Fused;
                bool saw_level = false;
                bool saw_fusion = false;
                for (const auto& [k2, v2] : val[i].items()) {
                    const std::string p2 = p + "." + k2;
                    try {
                        if (k2 == "level") {
                            level = parse_level(cfg_string(v2, p2));
                            saw_level = true;
                        } else if (k2 == "fusion") {
                            fusion = parse_fusion(cfg_string(v2, p2));
                            saw_fusion = true;
                        } else {
                            cfg_fail(p2, "unknown field");
                        }
                    } catch (const std::invalid_argument& ex) {
                        cfg_fail(p2, ex.what());
                    }
                }
                if (!saw_level || !saw_fusion) cfg_fail(p, "needs both level and fusion");
                cfg.partitions.emplace_back(level, fusion);
            }
        } else {
            cfg_fail(key, "unknown field");
        }
    }
    cfg.validate();
    return cfg;
}

// ------------------------------------------------------------- grid cells

struct CellSpec {
    PrivacyLevel level = PrivacyLevel::Centralised;
    FusionMode fusion = FusionMode::Fused;
    std::string model;  // "flat-dense", "token-pooling", or "mutual"
    std::uint64_t seed = 0;

    std::string label() const {
        return level_name(level) + " (" + fusion_code(fusion) + ") " + model + " seed=" +
               std::to_string(seed);
    }
};

struct CellResult {
    CellSpec spec;
    bool failed = false;
    std::string error;
    std::vector<RoundMetrics> rounds;
};

struct RunReport {
    std::vector<CellResult> cells;
    std::size_t failures = 0;
};

inline Architecture make_arch(const std::string& name, const ExperimentConfig& cfg) {
    Architecture arch;
    if (name == "flat-dense") arch.kind = ArchKind::FlatDense;
    else if (name == "token-pooling") arch.kind = ArchKind::TokenPooling;
    else throw std::invalid_argument("unknown model '" + name + "'");
    arch.input_width = cfg.gen.feature_width;
    arch.max_modalities = kNumModalities;
    arch.hidden = cfg.hidden;
    arch.num_classes = kNumClasses;
    return arch;
}

// Plain cells for every (partition, model, seed); one mutual cell per seed on
// each modality-separated partition when enabled. Order is fixed so outputs
// are reproducible byte for byte.
inline std::vector<CellSpec> enumerate_cells(const ExperimentConfig& cfg) {
    std::vector<CellSpec> cells;
    for (const auto& [level, fusion] : cfg.partitions)
        for (const auto& model : cfg.models)
            for (const std::uint64_t seed : cfg.seeds) cells.push_back({level, fusion, model, seed});
    if (cfg.mutual_enabled)
        for (const auto& [level, fusion] : cfg.partitions)
            if (level == PrivacyLevel::SubjectEnvMod && fusion == FusionMode::Separated)
                for (const std::uint64_t seed : cfg.seeds)
                    cells.push_back({level, fusion, "mutual", seed});
    return cells;
}

inline CellResult run_cell(const ExperimentConfig& cfg, const CellSpec& cell) {
    CellResult res;
    res.spec = cell;
    try {
        const auto data = generate(cfg.gen, derive_seed(cell.seed, kStreamData));
        const PartitionSpec pspec{cell.level, cell.fusion, cfg.holdout_subject};

        ExperimentSetup setup;
        setup.partition = partition(data, pspec);
        setup.partition_label = pspec.label();
        setup.fed = cfg.fed;
        setup.fed.seed = cell.seed;
        setup.opt = cfg.opt;
        if (cell.model == "mutual") {
            setup.mode = TrainMode::Mutual;
            setup.global_arch = make_arch("token-pooling", cfg);
            setup.group_arch = make_arch("flat-dense", cfg);
            setup.mutual = cfg.mutual;
            setup.model_label = "mutual-global";
        } else {
            setup.mode = TrainMode::Plain;
            setup.global_arch = make_arch(cell.model, cfg);
            setup.group_arch = setup.global_arch;
            setup.model_label = cell.model;
        }
        ExperimentResult r = run_experiment(setup);
        res.rounds = std::move(r.rounds);
    } catch (const std::exception& ex) {
        res.failed = true;
        res.error = ex.what();
    }
    return res;
}

// Runs every cell, optionally across worker threads. Cells are independent
// (each regenerates its own data), and results land at their enumeration
// index, so the report is identical no matter how work was scheduled.
inline RunReport run_grid(const ExperimentConfig& cfg, int parallel = 1) {
    const std::vector<CellSpec> specs = enumerate_cells(cfg);
    RunReport report;
    report.cells.resize(specs.size());

    std::atomic<std::size_t> next{0};
    const auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= specs.size()) return;
            const auto t0 = std::chrono::steady_clock::now();
            report.cells[i] = run_cell(cfg, specs[i]);
            const auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0);
            const CellResult& c = report.cells[i];
            std::ostringstream os;
            os << "cell " << (i + 1) << "/" << specs.size() << " " << specs[i].label();
            if (c.failed) {
                os << " FAILED: " << c.error;
            } else if (!c.rounds.empty()) {
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.4f", c.rounds.back().accuracy);
                os << " final-acc=" << buf;
            }
            char tbuf[32];
            std::snprintf(tbuf, sizeof tbuf, "%.1fs", dt.count());
            os << " (" << tbuf << ")";
            log_info(os.str());
        }
    };

    if (parallel <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        const int n = std::min<int>(parallel, static_cast<int>(specs.size()));
        threads.reserve(n);
        for (int t = 0; t < n; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    for (const auto& c : report.cells)
        if (c.failed) ++report.failures;
    return report;
}

// ----------------------------------------------------------------- output

namespace detail {

inline std::string fmt9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9f", v);
    return buf;
}

inline std::string fmt4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

}  // namespace detail

inline void write_rounds_csv(std::ostream& os, const std::vector<CellResult>& cells) {
    os << "partition,fusion,model,seed,round,accuracy,macro_f1\n";
    for (const CellResult& c : cells) {
        if (c.failed) continue;
        for (const RoundMetrics& rm : c.rounds) {
            os << level_name(c.spec.level) << ',' << fusion_code(c.spec.fusion) << ','
               << rm.model_label << ',' << c.spec.seed << ',' << rm.round << ','
               << detail::fmt9(rm.accuracy) << ',' << detail::fmt9(rm.macro_f1) << '\n';
        }
    }
}

// Final-round metrics arranged as one row per partition and one column per
// model, each entry mean±std across seeds.
inline void write_summary(std::ostream& os, const ExperimentConfig& cfg,
                          const std::vector<CellResult>& cells) {
    struct Agg {
        std::vector<double> acc;
        std::vector<double> f1;
        bool failed = false;
    };
    // key: (level, fusion, model label)
    std::map<std::tuple<int, int, std::string>, Agg> table;
    const auto key_of = [](PrivacyLevel l, FusionMode f, const std::string& m) {
        return std::make_tuple(static_cast<int>(l), static_cast<int>(f), m);
    };

    for (const CellResult& c : cells) {
        std::vector<std::string> labels;
        if (c.spec.model == "mutual") labels = {"mutual-global", "ensemble"};
        else labels = {c.spec.model};
        for (const std::string& label : labels) {
            Agg& agg = table[key_of(c.spec.level, c.spec.fusion, label)];
            if (c.failed) {
                agg.failed = true;
                continue;
            }
            for (const RoundMetrics& rm : c.rounds) {
                if (rm.round != cfg.fed.rounds || rm.model_label != label) continue;
                agg.acc.push_back(rm.accuracy);
                agg.f1.push_back(rm.macro_f1);
            }
        }
    }

    std::vector<std::string> columns;
    for (const auto& m : cfg.models) columns.push_back(m);
    if (cfg.mutual_enabled) {
        columns.push_back("mutual-global");
        columns.push_back("ensemble");
    }

    const auto cell_text = [&](PrivacyLevel l, FusionMode f, const std::string& m,
                               bool use_acc) -> std::string {
        const auto it = table.find(key_of(l, f, m));
        if (it == table.end()) return "-";
        if (it->second.failed) return "FAILED";
        const std::vector<double>& vals = use_acc ? it->second.acc : it->second.f1;
        if (vals.empty()) return "-";
        const SeedSummary s = aggregate_seeds(vals);
        return detail::fmt4(s.mean) + "±" + detail::fmt4(s.std_dev);
    };

    const auto block = [&](const std::string& title, bool use_acc) {
        os << title << " (final round, mean±std over " << cfg.seeds.size() << " seeds)\n\n";
        const int w0 = 22;
        const int wc = 18;
        os << std::left << std::setw(w0) << "partition";
        for (const auto& col : columns) os << std::setw(wc) << col;
        os << '\n';
        for (const auto& [level, fusion] : cfg.partitions) {
            os << std::setw(w0) << (level_name(level) + " (" + fusion_code(fusion) + ")");
            for (const auto& col : columns) os << std::setw(wc) << cell_text(level, fusion, col, use_acc);
            os << '\n';
        }
        os << '\n';
    };

    block("accuracy", true);
    block("macro-F1", false);
}

inline void write_run_manifest(std::ostream& os, const ExperimentConfig& cfg,
                               const RunReport& report) {
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016llx",
                  static_cast<unsigned long long>(cfg.config_hash()));
    os << "privpart " << kVersion << '\n';
    os << "config-hash: " << hash << '\n';
    os << "seeds:";
    for (const std::uint64_t s : cfg.seeds) os << ' ' << s;
    os << '\n';
    os << "cells: " << report.cells.size() << '\n';
    os << "failed: " << report.failures << '\n';
}

// Writes rounds.csv, summary.txt, manifest.txt, and (optionally) the first
// seed's dataset under cfg.out_dir.
inline void write_outputs(const ExperimentConfig& cfg, const RunReport& report) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const auto open = [](const fs::path& p) {
        std::ofstream os(p);
        if (!os) throw std::runtime_error("cannot open " + p.string() + " for writing");
        return os;
    };
    {
        auto os = open(fs::path(cfg.out_dir) / "rounds.csv");
        write_rounds_csv(os, report.cells);
    }
    {
        auto os = open(fs::path(cfg.out_dir) / "summary.txt");
        write_summary(os, cfg, report.cells);
    }
    {
        auto os = open(fs::path(cfg.out_dir) / "manifest.txt");
        write_run_manifest(os, cfg, report);
    }
    if (cfg.write_dataset && !cfg.seeds.empty()) {
        const auto data = generate(cfg.gen, derive_seed(cfg.seeds.front(), kStreamData));
        write_manifest(data, (fs::path(cfg.out_dir) / "dataset.jsonl").string());
    }
    log_info("wrote " + cfg.out_dir + "/{rounds.csv, summary.txt, manifest.txt" +
             (cfg.write_dataset ? ", dataset.jsonl}" : "}"));
}

}  // namespace privpart
