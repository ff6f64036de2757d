#include "capsnav/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace capsnav {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double parse_double(const KvMap& kv, const std::string& key, double fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    try {
        std::size_t pos = 0;
        double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' has non-numeric value '" + it->second + "'");
    }
}

long parse_long(const KvMap& kv, const std::string& key, long fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    try {
        std::size_t pos = 0;
        long v = std::stol(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' has non-integer value '" + it->second + "'");
    }
}

bool parse_bool(const KvMap& kv, const std::string& key, bool fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config key '" + key + "' has non-boolean value '" + it->second + "'");
}

std::string parse_string(const KvMap& kv, const std::string& key, const std::string& fallback) {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : it->second;
}

}  // namespace

KvMap parse_config_text(const std::string& text) {
    KvMap kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw LoadError("config line " + std::to_string(lineno) + " is not 'key = value': " +
                            line);
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw LoadError("config line " + std::to_string(lineno) + " has no key");
        kv[key] = value;
    }
    return kv;
}

KvMap parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw LoadError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

ExperimentConfig resolve_experiment(const KvMap& kv) {
    static const std::vector<std::string> known = {
        "scenario.name", "scenario.sparsity", "scenario.texture",
        "net.kind", "net.icm_eta",
        "train.seed", "train.gamma", "train.lr", "train.entropy_coef",
        "train.value_loss_coef", "train.workers", "train.rollout_len",
        "train.max_env_steps", "train.grad_clip", "train.eval_every_updates",
        "train.eval_episodes", "train.eval_max_steps", "train.early_stop_score",
        "train.early_stop_patience", "train.nstep", "train.parallel",
        "train.icm_forward_coef", "train.icm_inverse_coef",
        "train.adam_beta1", "train.adam_beta2", "train.adam_eps",
        "env.frameskip", "out.dir", "curriculum.checkpoint"};
    for (const auto& [key, value] : kv) {
        (void)value;
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError("unknown config key: " + key);
    }

    ExperimentConfig cfg;
    cfg.scenario.scenario = scenario_from_string(parse_string(kv, "scenario.name", "mini"));
    cfg.scenario.sparsity = sparsity_from_string(parse_string(kv, "scenario.sparsity", "dense"));
    cfg.scenario.texture = texture_from_string(parse_string(kv, "scenario.texture", "varied"));
    cfg.net_kind = net_kind_from_string(parse_string(kv, "net.kind", "capsem"));

    TrainConfig& t = cfg.train;
    t.icm_eta = parse_double(kv, "net.icm_eta", t.icm_eta);
    t.seed = static_cast<std::uint64_t>(parse_long(kv, "train.seed", 1));
    t.gamma = parse_double(kv, "train.gamma", t.gamma);
    t.lr = parse_double(kv, "train.lr", t.lr);
    t.entropy_coef = parse_double(kv, "train.entropy_coef", t.entropy_coef);
    t.value_loss_coef = parse_double(kv, "train.value_loss_coef", t.value_loss_coef);
    t.workers = static_cast<int>(parse_long(kv, "train.workers", t.workers));
    t.rollout_len = static_cast<int>(parse_long(kv, "train.rollout_len", t.rollout_len));
    t.max_env_steps = parse_long(kv, "train.max_env_steps", t.max_env_steps);
    t.grad_clip = parse_double(kv, "train.grad_clip", t.grad_clip);
    t.eval_every_updates =
        static_cast<int>(parse_long(kv, "train.eval_every_updates", t.eval_every_updates));
    t.eval_episodes = static_cast<int>(parse_long(kv, "train.eval_episodes", t.eval_episodes));
    t.eval_max_steps = static_cast<int>(parse_long(kv, "train.eval_max_steps", t.eval_max_steps));
    t.early_stop_score = parse_double(kv, "train.early_stop_score", t.early_stop_score);
    t.early_stop_patience =
        static_cast<int>(parse_long(kv, "train.early_stop_patience", t.early_stop_patience));
    t.nstep = static_cast<int>(parse_long(kv, "train.nstep", t.nstep));
    t.parallel = parse_bool(kv, "train.parallel", t.parallel);
    t.icm_forward_coef = parse_double(kv, "train.icm_forward_coef", t.icm_forward_coef);
    t.icm_inverse_coef = parse_double(kv, "train.icm_inverse_coef", t.icm_inverse_coef);
    t.adam_beta1 = parse_double(kv, "train.adam_beta1", t.adam_beta1);
    t.adam_beta2 = parse_double(kv, "train.adam_beta2", t.adam_beta2);
    t.adam_eps = parse_double(kv, "train.adam_eps", t.adam_eps);
    t.frameskip = static_cast<int>(parse_long(kv, "env.frameskip", t.frameskip));
    t.validate();

    cfg.out_dir = parse_string(kv, "out.dir", cfg.out_dir);
    cfg.curriculum_checkpoint = parse_string(kv, "curriculum.checkpoint", "");
    return cfg;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

KvMap to_kv(const ExperimentConfig& cfg) {
    const TrainConfig& t = cfg.train;
    KvMap kv;
    kv["scenario.name"] = to_string(cfg.scenario.scenario);
    kv["scenario.sparsity"] = to_string(cfg.scenario.sparsity);
    kv["scenario.texture"] = to_string(cfg.scenario.texture);
    kv["net.kind"] = to_string(cfg.net_kind);
    kv["net.icm_eta"] = format_double(t.icm_eta);
    kv["train.seed"] = std::to_string(t.seed);
    kv["train.gamma"] = format_double(t.gamma);
    kv["train.lr"] = format_double(t.lr);
    kv["train.entropy_coef"] = format_double(t.entropy_coef);
    kv["train.value_loss_coef"] = format_double(t.value_loss_coef);
    kv["train.workers"] = std::to_string(t.workers);
    kv["train.rollout_len"] = std::to_string(t.rollout_len);
    kv["train.max_env_steps"] = std::to_string(t.max_env_steps);
    kv["train.grad_clip"] = format_double(t.grad_clip);
    kv["train.eval_every_updates"] = std::to_string(t.eval_every_updates);
    kv["train.eval_episodes"] = std::to_string(t.eval_episodes);
    kv["train.eval_max_steps"] = std::to_string(t.eval_max_steps);
    kv["train.early_stop_score"] = format_double(t.early_stop_score);
    kv["train.early_stop_patience"] = std::to_string(t.early_stop_patience);
    kv["train.nstep"] = std::to_string(t.nstep);
    kv["train.parallel"] = t.parallel ? "true" : "false";
    kv["train.icm_forward_coef"] = format_double(t.icm_forward_coef);
    kv["train.icm_inverse_coef"] = format_double(t.icm_inverse_coef);
    kv["train.adam_beta1"] = format_double(t.adam_beta1);
    kv["train.adam_beta2"] = format_double(t.adam_beta2);
    kv["train.adam_eps"] = format_double(t.adam_eps);
    kv["env.frameskip"] = std::to_string(t.frameskip);
    kv["out.dir"] = cfg.out_dir;
    kv["curriculum.checkpoint"] = cfg.curriculum_checkpoint;
    return kv;
}

std::string serialize_config(const KvMap& kv) {
    std::ostringstream os;
    for (const auto& [key, value] : kv) os << key << " = " << value << "\n";
    return os.str();
}

void write_config_file(const std::string& path, const KvMap& kv) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw LoadError("cannot write config file: " + path);
    os << serialize_config(kv);
    if (!os) throw LoadError("config write failed: " + path);
}

}  // namespace capsnav
