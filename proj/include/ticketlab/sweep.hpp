#pragma once

// Experiment sweeps: a textual plan expands into (arm, round, seed) cells,
// each cell runs as an isolated job and persists its result as one JSON file
// under a plan-addressed directory, so interrupted sweeps resume without
// recomputing finished cells. Reports aggregate cells into the CSV and
// per-target summary-table formats.

#include <string>
#include <vector>

#include "ticketlab/transfer.hpp"

namespace ticketlab {

struct PlanArm {
    ArmKind kind = ArmKind::ScratchUnpruned;
    std::string source_label = "-";
    std::string ladder_dir;  // holds round_NN.ticket / trained_NN.ticket files
};

struct SweepPlan {
    std::string target_path;
    std::string target_label;
    std::vector<PlanArm> arms;
    std::vector<size_t> rounds = {1};
    std::vector<uint64_t> seeds = {0, 1, 2, 3};
    TrainConfig train_cfg;
    std::string model_spec_string;  // scratch-arm architecture
    std::string raw_text;

    uint64_t content_hash() const;
    size_t cell_count() const;
};

SweepPlan parse_plan_text(const std::string& text);
SweepPlan parse_plan_file(const std::string& path);

struct SweepRow {
    std::string target;
    std::string arm;
    std::string source;
    size_t round = 0;
    double sparsity = 0.0;
    uint64_t seed = 0;
    double test_accuracy = 0.0;
    size_t stopped_epoch = 0;
    size_t best_val_epoch = 0;
    std::string status = "ok";  // "ok" or "error"
    std::string error;
};

struct SweepReport {
    std::vector<SweepRow> rows;

    struct Aggregate {
        std::string target, arm, source;
        size_t round = 0;
        double sparsity = 0.0;
        double acc_mean = 0.0;
        double acc_std = 0.0;  // population std; meaningful only when n >= 2
        size_t n = 0;
    };
    // Grouped over seeds by (target, arm, source, round), ok rows only.
    std::vector<Aggregate> aggregates() const;

    void sort_rows();
};

struct SweepStats {
    size_t computed = 0;
    size_t skipped = 0;
    size_t failed = 0;
};

// Runs every cell that has no result file yet; `max_cells` bounds how many
// cells this call computes (tests use it to simulate interruption).
SweepReport run_sweep(const SweepPlan& plan, const std::string& out_dir, size_t jobs,
                      SweepStats* stats = nullptr, size_t max_cells = SIZE_MAX);

// Directory holding this plan's cell files.
std::string sweep_cell_dir(const SweepPlan& plan, const std::string& out_dir);

// Rebuilds a report from a directory of cell JSON files.
SweepReport report_from_dir(const std::string& dir);

std::string to_csv(const SweepReport& report);
SweepReport parse_csv(const std::string& csv);
std::string to_table(const SweepReport& report);

// Single-cell JSON encoding, shared by the sweep scheduler and the CLI
// transfer/scratch commands.
std::string cell_to_json(const SweepRow& row);
SweepRow cell_from_json(const std::string& json_text);

}  // namespace ticketlab
