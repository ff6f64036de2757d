#include "capsnav/export.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "capsnav/config.hpp"
#include "json.hpp"

namespace capsnav {

std::vector<MetricsRecord> read_metrics_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw LoadError("cannot open metrics file: " + path);
    std::vector<MetricsRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw LoadError(path + ":" + std::to_string(lineno) + ": not a JSON record");
        MetricsRecord r;
        r.env_steps = j.at("env_steps").get<long>();
        r.updates = j.at("updates").get<long>();
        r.mean_score = j.at("mean_score").get<double>();
        r.score_stderr = j.at("score_stderr").get<double>();
        r.wall_ms = j.value("wall_ms", 0.0);
        r.entropy = j.value("entropy", 0.0);
        r.value_loss = j.value("value_loss", 0.0);
        r.policy_loss = j.value("policy_loss", 0.0);
        r.intrinsic_mean = j.value("intrinsic_mean", 0.0);
        out.push_back(r);
    }
    return out;
}

void append_metrics_line(const std::string& path, const MetricsRecord& rec) {
    std::ofstream os(path, std::ios::app);
    if (!os) throw LoadError("cannot append to metrics file: " + path);
    os << to_json_line(rec) << "\n";
}

void write_run_csv(const std::string& path, const std::vector<MetricsRecord>& records) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw LoadError("cannot write CSV: " + path);
    os << "env_steps,mean_score,stderr\n";
    for (const MetricsRecord& r : records)
        os << r.env_steps << "," << format_double(r.mean_score) << ","
           << format_double(r.score_stderr) << "\n";
}

std::vector<AggregateRow> aggregate_runs(const std::vector<std::vector<MetricsRecord>>& runs) {
    std::map<long, std::vector<double>> by_steps;
    for (const auto& run : runs)
        for (const MetricsRecord& r : run) by_steps[r.env_steps].push_back(r.mean_score);

    std::vector<AggregateRow> out;
    const int n = static_cast<int>(runs.size());
    for (const auto& [steps, scores] : by_steps) {
        if (static_cast<int>(scores.size()) != n) continue;  // not recorded by every run
        AggregateRow row;
        row.env_steps = steps;
        row.runs = n;
        for (double s : scores) row.mean_score += s;
        row.mean_score /= n;
        if (n > 1) {
            double var = 0.0;
            for (double s : scores) var += (s - row.mean_score) * (s - row.mean_score);
            row.score_stderr = std::sqrt(var / (n - 1)) / std::sqrt(static_cast<double>(n));
        }
        out.push_back(row);
    }
    return out;
}

void write_aggregate_csv(const std::string& path, const std::vector<AggregateRow>& rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw LoadError("cannot write CSV: " + path);
    os << "env_steps,mean_score,stderr,runs\n";
    for (const AggregateRow& r : rows)
        os << r.env_steps << "," << format_double(r.mean_score) << ","
           << format_double(r.score_stderr) << "," << r.runs << "\n";
}

int export_metrics_dir(const std::string& metrics_dir, const std::string& out_dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(metrics_dir))
        throw LoadError("metrics dir does not exist: " + metrics_dir);

    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(metrics_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".jsonl")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw LoadError("no *.jsonl metric streams under " + metrics_dir);

    fs::create_directories(out_dir);
    std::vector<std::vector<MetricsRecord>> runs;
    for (const fs::path& f : files) {
        std::vector<MetricsRecord> records = read_metrics_file(f.string());
        std::string stem = f.stem().string();
        write_run_csv((fs::path(out_dir) / (stem + ".csv")).string(), records);
        runs.push_back(std::move(records));
    }
    write_aggregate_csv((fs::path(out_dir) / "aggregate.csv").string(), aggregate_runs(runs));
    return static_cast<int>(runs.size());
}

}  // namespace capsnav
