#pragma once

#include <string>
#include <vector>

#include "chanfuse/fusion.hpp"

namespace chanfuse {

enum class SweepVar { None, TUnit, TFb, SnrDb, LearningRate };

std::string sweep_var_name(SweepVar v);
SweepVar sweep_var_from_name(const std::string& s);

struct ExperimentSpec {
    DatasetConfig dataset;
    std::vector<std::string> wirings;  // preset names or wiring file paths
    SweepVar sweep = SweepVar::None;
    std::vector<double> values;  // one cell per value; empty only for None
    std::vector<uint64_t> seeds{1};
    int budget = 200;
    int patience = 20;
    double min_delta = 1e-5;
    int batch_size = 128;
    bool baseline_ls = false;
    bool baseline_lmmse = false;
    std::string figure = "experiment";
    std::string out_dir = ".";
    int workers = 1;
    bool trace = false;  // per-epoch traces for the terminal stage

    void validate() const;
};

struct ResultRow {
    std::string figure;
    std::string model;  // wiring name, "LS" or "LMMSE"
    std::string kind;   // "net" | "baseline"
    std::string sweep_var;
    double sweep_value = 0.0;
    uint64_t seed = 0;
    double nmse = 0.0;
    size_t nmse_excluded = 0;
    int64_t flops = 0;
    int epochs = 0;
    bool nan_flag = false;
    double wall_s = 0.0;  // reported via the timing file only
};

struct TraceRow {
    std::string figure;
    std::string model;
    double sweep_value = 0.0;
    uint64_t seed = 0;
    std::string stage;
    int epoch = 0;
    double train_loss = 0.0;
    double test_nmse = 0.0;  // NaN when not recorded
};

struct ExperimentResult {
    std::vector<ResultRow> rows;
    std::vector<TraceRow> traces;
    bool any_nan = false;
};

/// Runs every (sweep value, wiring, seed) cell: datasets are regenerated per
/// value (except the SNR sweep, which trains once and re-tests per value),
/// cells run on a small worker pool, each cell internally single-threaded.
ExperimentResult run(const ExperimentSpec& spec);

/// Classical LS/LMMSE reference rows over the same test sets.
std::vector<ResultRow> baseline_rows(const ExperimentSpec& spec, const Dataset& ds,
                                     double sweep_value);

// Deterministic cells only (results/summary); wall clocks go to the timing
// file so reruns stay byte-identical.
void write_results_csv(const std::vector<ResultRow>& rows, const std::string& path);
void write_summary_csv(const std::vector<ResultRow>& rows, const std::string& path);
void write_timing_csv(const std::vector<ResultRow>& rows, const std::string& path);
void write_trace_csv(const std::vector<TraceRow>& rows, const std::string& path);

ExperimentSpec load_experiment_spec(const std::string& path);

inline constexpr const char* kResultsSchema = "chanfuse-results-v1";
inline constexpr const char* kSummarySchema = "chanfuse-summary-v1";
inline constexpr const char* kTimingSchema = "chanfuse-timing-v1";
inline constexpr const char* kTraceSchema = "chanfuse-trace-v1";

}  // namespace chanfuse
