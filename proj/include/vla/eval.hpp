#pragma once

#include <string>
#include <vector>

#include "vla/model.hpp"
#include "vla/simenv.hpp"

namespace vla {

struct EvalResult {
    std::string head;
    std::string task;
    std::string perturbation = "clean";
    int episodes = 0;
    int successes = 0;
    double success_rate = 0.0;
    // stack_cubes only: mean distance of held-transit gripper positions to the
    // nearest demonstrated lane. 0.5 sentinel when the wall was never crossed
    // while holding (a collapsed policy never transits).
    double mode_distance = 0.5;
    std::vector<bool> outcomes;  // per-episode, in seed order
};

// Rolls out `episodes` receding-horizon episodes (execute the first
// exec_horizon actions of every predicted chunk, then re-plan). Episode i
// uses environment seed seed_base + i; seed_base defaults well past every
// demonstration seed so train/eval splits never overlap.
EvalResult evaluate(PolicyModel& model, const std::string& task, int episodes,
                    uint64_t seed_base = 1000000, const std::string& perturbation = "");

// Same protocol driven by the scripted oracle instead of a model.
EvalResult evaluate_oracle(const std::string& task, int episodes, uint64_t seed_base = 1000000,
                           const std::string& perturbation = "");

struct LatencyStats {
    std::string head;
    int warmups = 0;
    int measurements = 0;
    double median_ms_per_action = 0.0;
    double p95_ms_per_action = 0.0;
    double median_ms_per_chunk = 0.0;
    double p95_ms_per_chunk = 0.0;
    int64_t backbone_passes_per_chunk = 0;
    int64_t denoiser_passes_per_chunk = 0;
    int64_t forward_passes_per_chunk = 0;
};

// Policy-only timing on a fixed observation: monotonic clock, `warmups`
// discarded calls, then `measurements` timed calls. The AR measurement unit
// is one action (7 token passes); per-chunk numbers scale by the horizon.
// The diffusion measurement unit is one chunk; per-action numbers divide by
// exec_horizon. Refuses unmerged adapters.
LatencyStats bench_latency(PolicyModel& model, int measurements = 100, int warmups = 10);

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    std::vector<int> xs;         // token counts H*7
    std::vector<double> ys_ms;   // median decode time per chunk
};

// Measures AR chunk decode time across horizons and fits time ~ H*7.
LinearFit ar_latency_sweep(PolicyModel& model, const std::vector<int>& horizons,
                           int reps_per_point = 3);

// ---- report emission ----

struct ResultRow {
    std::string head;
    std::string task;
    std::string perturbation = "clean";
    int episodes = 0;
    double success = 0.0;
    int64_t params_total = 0;
    int64_t params_trainable = 0;
    double latency_ms = 0.0;      // median per action
    int64_t forward_passes = 0;   // per chunk
};

std::string result_csv_header();
std::string result_csv_row(const ResultRow& row);
std::vector<ResultRow> load_result_rows(const std::string& csv_path);

// Reads every *.csv under in_dir, aggregates duplicate {head, task,
// perturbation} rows to mean +/- std of success, and writes results.csv,
// summary.txt (aligned table) and plot_data.csv to out_dir. Byte-identical
// for identical inputs.
void write_report(const std::string& in_dir, const std::string& out_dir);

}  // namespace vla
