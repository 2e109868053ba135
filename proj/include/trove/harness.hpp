#pragma once

// Sweep orchestration. Each cell runs
//   generate -> task gate -> train -> model gate -> discover + baselines
//   -> metrics -> mitigation
// and writes runs/<config_id>/ with record.json written last, so a directory
// without a record is an interrupted run and is redone on resume.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "trove/evalkit.hpp"
#include "trove/mitigation.hpp"
#include "trove/model.hpp"
#include "trove/syndata.hpp"
#include "trove/trove.hpp"

namespace trove {

struct SweepCell {
    FeatureKind kind = FeatureKind::Background;
    int seq_len = 5;
    double cramers_v = 0.95;
    int feature_span = 2;
    double span_fraction = 0.4;
    std::uint64_t seed = 0;
};

std::string config_id(const SweepCell& cell);

/// max(1, round(fraction * n)).
int span_for(double fraction, int n);

struct RunOptions {
    int train_count = 2000;
    int val_count = 1000;
    int test_count = 1000;
    double q_south = 0.98;
    TrainConfig train;
    std::vector<int> k_range = default_k_range();
    PromptOptions prompts;
    int mitigation_top_k = 3;
    bool write_tensors = false;
};

nlohmann::json to_json(const RunOptions& o);
RunOptions run_options_from_json(const nlohmann::json& j);

struct SweepGrid {
    std::vector<FeatureKind> kinds;
    std::vector<int> seq_lens;
    std::vector<double> cramers_v;
    std::vector<double> span_fractions;
    std::vector<std::uint64_t> seeds;
    RunOptions options;

    static SweepGrid default_grid();
    /// Cartesian product; cells whose spans coincide are emitted once.
    std::vector<SweepCell> cells() const;
};

nlohmann::json to_json(const SweepGrid& g);
SweepGrid sweep_grid_from_json(const nlohmann::json& j);
/// "default" or a path to a JSON grid file.
SweepGrid load_grid(const std::string& spec);

DatasetConfig dataset_config(const SweepCell& cell, const RunOptions& opt);

struct MethodMetrics {
    std::string method;
    double p10 = 0.0, p25 = 0.0, p100 = 0.0, r_precision = 0.0;
    int list_length = 0;
    std::vector<std::string> truncated;  // cutoffs longer than the list
};

/// P@10, P@25, P@100 and R-Precision of a ranked list.
MethodMetrics score_list(const RankedList& list, std::span<const std::uint8_t> truth);

struct RunRecord {
    std::string config_id;
    SweepCell cell;
    std::string status;  // complete | excluded | failed
    std::string failed_stage;
    std::string error;
    TaskGate task_gate;
    GateResult model_gate;
    double realized_cramers_v = 0.0;
    double val_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::vector<MethodMetrics> metrics;
    std::optional<MitigationTable> mitigation;
    int discovered_k = 0;
    double temperature = 1.0;
    std::map<std::string, std::string> artifacts;
    std::map<std::string, std::string> hashes;
    double wall_seconds = 0.0;
};

nlohmann::json to_json(const RunRecord& r);
RunRecord run_record_from_json(const nlohmann::json& j);

/// Task gates keyed by the feature-free dataset and training config, memoized
/// in memory and under <root>/_gate_task/.
class TaskGateCache {
public:
    explicit TaskGateCache(std::filesystem::path dir);
    ~TaskGateCache();
    TaskGateCache(const TaskGateCache&) = delete;
    TaskGateCache& operator=(const TaskGateCache&) = delete;

    TaskGate get(const DatasetConfig& cfg, const TrainConfig& train);
    static std::string key(const DatasetConfig& cfg, const TrainConfig& train);

private:
    struct Impl;
    Impl* impl_;
};

RunRecord run_config(const SweepCell& cell, const RunOptions& opt, const std::filesystem::path& root,
                     TaskGateCache& gates);

/// Worker count from TROVE_WORKERS, defaulting to the hardware concurrency.
int sweep_workers();

struct SweepSummary {
    int cells = 0;
    int complete = 0;
    int excluded = 0;
    int failed = 0;
    int resumed = 0;
};

SweepSummary sweep(const SweepGrid& grid, const std::filesystem::path& root, int workers = 0);

/// Re-aggregates every record under `root` into summary.csv, mitigation_summary.csv and gates.txt.
std::vector<RunRecord> aggregate(const std::filesystem::path& root);

std::vector<RunRecord> load_records(const std::filesystem::path& root);

std::string metrics_csv(const RunRecord& r);

}  // namespace trove
