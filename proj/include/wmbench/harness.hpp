#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wmbench/dataset.hpp"

namespace wmbench {

struct DatasetSpec {
    // Exactly one source: a directory of PNGs or a synthetic procedural corpus.
    std::optional<std::filesystem::path> directory;
    std::size_t count = 100;
    int size = 64;
    std::uint64_t seed = 1;
};

struct Dataset {
    std::vector<DatasetEntry> entries;
    nlohmann::json manifest;
};

Dataset ingest_dataset(const DatasetSpec& spec);

/// One attack family with its parameter grid.
struct AttackSpec {
    std::string type;  // none | blur | rotation | straight-blur | lba | random-mask | regen
    std::vector<double> percentiles;
    std::vector<int> kernels;
    std::vector<std::string> settings;  // regen "[iterations]x[strength]"
    int size = 8;                       // blur
    double degrees = 75.0;              // rotation
};

struct ExperimentConfig {
    std::string id = "experiment";
    std::uint64_t seed = 1;
    DatasetSpec dataset;
    std::optional<std::filesystem::path> stegastamp;
    std::optional<std::filesystem::path> remover;
    std::string backend = "toy";
    std::uint64_t key_seed = 7;
    int radius = 10;
    std::vector<std::string> watermarks{"stegastamp"};  // stegastamp | treering | stacked-naive | stacked
    std::vector<AttackSpec> attacks;
    std::vector<std::string> metrics{"bitacc", "det"};  // bitacc | det | fid | auc | tpr@<fpr> | distance
    bool plots = true;

    /// Throws InvalidArgument on schema violations or missing paths.
    void validate() const;
    nlohmann::json to_json() const;
};

/// YAML file (see README for the schema). Relative paths resolve against the
/// config file's directory.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& yaml_text, const std::filesystem::path& base_dir = ".");

struct ReportRow {
    std::string watermark;
    std::string attack;
    std::string params;
    std::string metric;
    double value = 0.0;
    std::size_t n = 0;
    std::string status = "ok";  // "ok" or "error:<kind>"

    friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct CellError {
    std::string watermark;
    std::string attack;
    std::string params;
    std::string kind;
    std::string message;
    std::size_t failed_items = 0;
};

struct ReportTable {
    std::string experiment;
    std::vector<ReportRow> rows;
    std::vector<CellError> errors;
    std::size_t grid_size = 0;  // watermark × attack-cell combinations
    nlohmann::json provenance;
};

/// Worker count from WMBENCH_WORKERS (default: hardware concurrency, at least 1).
int worker_count();

ReportTable run_experiment(const ExperimentConfig& config,
                           const std::function<void(const std::string&)>& log = {});

/// Writes results.csv, results.json and (optionally) plots/*.png into `dir`.
void emit_report(const ReportTable& table, const std::filesystem::path& dir, bool plots = true);

std::string report_csv(const ReportTable& table);
std::vector<ReportRow> parse_report_csv(const std::string& text);

}  // namespace wmbench
