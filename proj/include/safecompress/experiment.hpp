#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "safecompress/orchestrator.hpp"

namespace safecompress {

/// Gaussian-cluster classification data. Class means are drawn once per seed
/// with per-coordinate spread `separation`; samples add isotropic noise of
/// standard deviation `noise`.
struct SyntheticSpec {
    std::size_t train_size = 400;
    std::size_t test_size = 400;
    Index features = 32;
    int classes = 4;
    double separation = 1.0;
    double noise = 1.0;
    /// Empty means uniform. Counts per class follow largest-remainder
    /// rounding, so the realised proportions are as exact as integers allow.
    std::vector<double> class_priors;

    bool operator==(const SyntheticSpec&) const = default;
};

struct DatasetSource {
    enum class Kind { Synthetic, Csv };
    Kind kind = Kind::Synthetic;
    SyntheticSpec synthetic;
    std::uint64_t seed = 0;
    std::string train_csv;
    std::string test_csv;
    std::string label_column = "label";

    bool operator==(const DatasetSource&) const = default;
};

struct ExperimentSpec {
    DatasetSource dataset;
    RunConfig run;
    std::string output_dir = "out";

    bool operator==(const ExperimentSpec&) const = default;
};

/// Parses and validates; missing keys take their defaults. Errors carry a
/// JSON path such as "$.attacker.epochs".
ExperimentSpec parse_config(const nlohmann::json& doc);
ExperimentSpec load_config(const std::filesystem::path& path);

/// Every field, defaults included; parse_config(to_json(s)) == s.
nlohmann::json to_json(const ExperimentSpec& spec);

std::pair<LabeledDataset, LabeledDataset> generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// Per-class sample counts for `n` rows under `priors` (uniform if empty).
std::vector<std::size_t> class_counts(std::size_t n, int classes, const std::vector<double>& priors);

/// Header row required; every non-label column is a numeric feature and the
/// label column holds integer class codes. class_count is max label + 1.
LabeledDataset load_csv(const std::filesystem::path& path, const std::string& label_column);
void write_csv(const LabeledDataset& data, const std::filesystem::path& path, const std::string& label_column = "label");

/// Train and test sets named by a dataset source.
std::pair<LabeledDataset, LabeledDataset> load_dataset(const DatasetSource& source);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    TargetModel model;
    std::uint64_t rounds_done = 0;
    std::uint64_t seed = 0;
};

/// Little-endian binary: "SAFC", u32 version, u32 dim count, u64 dims, f64
/// omega, u64 rounds, u64 iterations, u64 seed, u64 active count, per layer
/// f64 weights (row-major) and biases, then per layer the mask packed eight
/// positions per byte, least significant bit first.
void save_checkpoint(const TargetModel& model, const RunTrace& trace, std::uint64_t seed,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// One line of rounds.csv.
struct ReportRow {
    long round = 0;
    std::string strategy;
    EvalReport report;
};

/// rounds.csv (four candidate rows and one "selected:<strategy>" row per
/// round) and summary.json.
void emit_report(const RunTrace& trace, const std::filesystem::path& dir);
std::vector<ReportRow> report_rows(const RunTrace& trace);
std::vector<ReportRow> read_rounds_csv(const std::filesystem::path& path);
nlohmann::json summary_json(const RunTrace& trace);

}  // namespace safecompress
