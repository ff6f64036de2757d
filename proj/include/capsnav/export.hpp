#pragma once

#include <string>
#include <vector>

#include "capsnav/trainer.hpp"

namespace capsnav {

// Newline-delimited JSON, one record per evaluation.
std::vector<MetricsRecord> read_metrics_file(const std::string& path);
void append_metrics_line(const std::string& path, const MetricsRecord& rec);

// env_steps,mean_score,stderr
void write_run_csv(const std::string& path, const std::vector<MetricsRecord>& records);

struct AggregateRow {
    long env_steps = 0;
    double mean_score = 0.0;  // mean of the runs' mean scores
    double score_stderr = 0.0;  // sample stderr across runs
    int runs = 0;
};

// Aligns evaluation points by env_steps and keeps the points every run
// recorded (early-stopped runs drop later points from the aggregate).
std::vector<AggregateRow> aggregate_runs(const std::vector<std::vector<MetricsRecord>>& runs);

void write_aggregate_csv(const std::string& path, const std::vector<AggregateRow>& rows);

// Scans dir for *.jsonl metric streams, writes one CSV per run plus
// aggregate.csv into out_dir. Returns the number of runs exported;
// throws LoadError when the directory holds none.
int export_metrics_dir(const std::string& metrics_dir, const std::string& out_dir);

}  // namespace capsnav
