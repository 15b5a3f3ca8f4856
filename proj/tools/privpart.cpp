// Command-line front end: run an experiment grid from a JSON config, inspect
// how a dataset manifest partitions at a given privacy level, or print the
// library version. Exit codes: 0 success, 1 one or more grid cells failed,
// 2 bad arguments or config.
#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include <privpart/privpart.hpp>

namespace {

int cmd_run(const std::string& config_path, int parallel) {
    const privpart::ExperimentConfig cfg = privpart::ExperimentConfig::load(config_path);
    privpart::log_info("loaded " + config_path + ", " +
                       std::to_string(privpart::enumerate_cells(cfg).size()) + " cells");
    const privpart::RunReport report = privpart::run_grid(cfg, parallel);
    privpart::write_outputs(cfg, report);
    if (report.failures > 0) {
        std::cerr << report.failures << " of " << report.cells.size() << " cells failed\n";
        return 1;
    }
    return 0;
}

int cmd_stats(const std::string& manifest_path, const std::string& level_str,
              const std::string& fusion_str, double fraction, int holdout) {
    const auto recordings = privpart::read_manifest(manifest_path);
    privpart::PartitionSpec spec;
    spec.level = privpart::parse_level(level_str);
    spec.fusion = privpart::parse_fusion(fusion_str);
    spec.holdout_subject = holdout;
    if (!spec.valid()) throw std::runtime_error("invalid level/fusion combination: " + spec.label());

    const auto parts = privpart::partition(recordings, spec);
    const auto stats = privpart::partition_stats(parts.train_clients);
    const std::size_t per_round = privpart::clients_per_round(stats.client_count, fraction);

    std::printf("partition: %s\n", spec.label().c_str());
    std::printf("clients: %zu\n", stats.client_count);
    std::printf("clients-per-round: %zu\n", per_round);
    std::printf("samples-per-client: %.2f ± %.2f\n", stats.mean_samples, stats.std_samples);
    std::printf("holdout-samples: %zu\n", parts.test_set.size());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated privacy-partition simulator"};
    app.require_subcommand(1);

    std::string config_path;
    int parallel = 1;
    auto* run = app.add_subcommand("run", "run the experiment grid from a JSON config");
    run->add_option("config", config_path, "path to the JSON config")->required();
    run->add_option("--parallel", parallel, "worker threads (default 1)")->check(CLI::PositiveNumber);

    std::string manifest_path;
    std::string level_str;
    std::string fusion_str;
    double fraction = 0.30;
    int holdout = privpart::kNumSubjects;
    auto* stats = app.add_subcommand("stats", "partition a dataset manifest and report client stats");
    stats->add_option("manifest", manifest_path, "path to a dataset manifest (.jsonl)")->required();
    stats->add_option("--level", level_str, "privacy level: centralised, subj, subj+env, subj+env+mod")
        ->required();
    stats->add_option("--fusion", fusion_str, "fusion mode: fused or separated")->required();
    stats->add_option("--fraction", fraction, "client sampling fraction (default 0.3)");
    stats->add_option("--holdout", holdout, "holdout subject (default 6)");

    auto* version = app.add_subcommand("version", "print the library version");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (run->parsed()) return cmd_run(config_path, parallel);
        if (stats->parsed()) return cmd_stats(manifest_path, level_str, fusion_str, fraction, holdout);
        if (version->parsed()) {
            std::printf("privpart %s\n", privpart::kVersion);
            return 0;
        }
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 2;
    }
    return 2;
}
