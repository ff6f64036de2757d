#pragma once

#include <map>
#include <string>

#include "capsnav/trainer.hpp"

namespace capsnav {

// Flat dotted-key config: one `key = value` per line, '#' comments.
using KvMap = std::map<std::string, std::string>;

KvMap parse_config_text(const std::string& text);
KvMap parse_config_file(const std::string& path);

struct ExperimentConfig {
    ScenarioSpec scenario;
    NetKind net_kind = NetKind::kCapsEm;
    TrainConfig train;
    std::string out_dir = "runs/out";
    std::string curriculum_checkpoint;  // empty = train from scratch
};

// Applies defaults, parses and validates every key. Unknown keys and
// unparseable values raise ConfigError naming the key.
ExperimentConfig resolve_experiment(const KvMap& kv);

// Every key materialized, including defaulted ones; feeding the result
// back through resolve_experiment reproduces the run.
KvMap to_kv(const ExperimentConfig& cfg);

std::string serialize_config(const KvMap& kv);
void write_config_file(const std::string& path, const KvMap& kv);

std::string format_double(double v);  // round-trip exact

}  // namespace capsnav
