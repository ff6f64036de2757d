// capsnav: train / eval / params / export / render for the capsule
// exploration agent and its maze scenarios.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "capsnav/config.hpp"
#include "capsnav/export.hpp"
#include "capsnav/maze.hpp"
#include "capsnav/nets.hpp"
#include "capsnav/trainer.hpp"

namespace fs = std::filesystem;
using namespace capsnav;

namespace {

struct ScenarioFlags {
    std::string scenario;
    std::string sparsity;
    std::string texture;

    void add_to(CLI::App* cmd, bool required) {
        auto* s = cmd->add_option("--scenario", scenario,
                                  "scenario name (mwh | mwh_m | mwh_g | mini | mini_rot)");
        cmd->add_option("--sparsity", sparsity, "start placement (dense | sparse)");
        cmd->add_option("--texture", texture, "wall textures (uniform | varied)");
        if (required) s->required();
    }

    ScenarioSpec resolve(ScenarioSpec base = {}) const {
        if (!scenario.empty()) base.scenario = scenario_from_string(scenario);
        if (!sparsity.empty()) base.sparsity = sparsity_from_string(sparsity);
        if (!texture.empty()) base.texture = texture_from_string(texture);
        return base;
    }
};

int cmd_train(const std::string& config_path, const ScenarioFlags& flags, long seed_override,
              const std::string& out_override) {
    KvMap kv = parse_config_file(config_path);
    if (!flags.scenario.empty()) kv["scenario.name"] = flags.scenario;
    if (!flags.sparsity.empty()) kv["scenario.sparsity"] = flags.sparsity;
    if (!flags.texture.empty()) kv["scenario.texture"] = flags.texture;
    if (seed_override >= 0) kv["train.seed"] = std::to_string(seed_override);
    if (!out_override.empty()) kv["out.dir"] = out_override;

    ExperimentConfig cfg = resolve_experiment(kv);
    fs::create_directories(cfg.out_dir);

    AgentNet net = make_agent_net(cfg.net_kind, cfg.train.seed, cfg.train.icm_eta);
    if (!cfg.curriculum_checkpoint.empty()) {
        CheckpointInfo info = read_checkpoint_info(cfg.curriculum_checkpoint);
        if (info.kind != cfg.net_kind)
            throw ConfigError("curriculum checkpoint holds a " + to_string(info.kind) +
                              " net but net.kind is " + to_string(cfg.net_kind));
        curriculum_load(cfg.curriculum_checkpoint, net);
        std::printf("preloaded parameters from %s\n", cfg.curriculum_checkpoint.c_str());
    }

    // resolved snapshot first: the run is reproducible from this file alone
    write_config_file((fs::path(cfg.out_dir) / "resolved.cfg").string(), to_kv(cfg));

    std::string metrics_path = (fs::path(cfg.out_dir) / "metrics.jsonl").string();
    {
        std::ofstream truncate(metrics_path, std::ios::trunc);
        if (!truncate) throw LoadError("cannot write metrics file: " + metrics_path);
    }

    TrainResult result = train(cfg.train, cfg.scenario, net, [&](const MetricsRecord& rec) {
        append_metrics_line(metrics_path, rec);
        std::printf("steps %8ld  updates %6ld  score %.3f +- %.3f  entropy %.3f\n",
                    rec.env_steps, rec.updates, rec.mean_score, rec.score_stderr, rec.entropy);
        std::fflush(stdout);
    });

    std::string ckpt_path = (fs::path(cfg.out_dir) / "checkpoint.bin").string();
    save_checkpoint(ckpt_path, net);
    std::printf("done: %ld env steps, %ld updates%s; checkpoint %s\n", result.env_steps,
                result.updates, result.early_stopped ? " (early stop)" : "", ckpt_path.c_str());
    return 0;
}

int cmd_eval(const std::string& checkpoint, const ScenarioFlags& flags, long seed, int episodes) {
    if (episodes < 1) throw ConfigError("--episodes must be >= 1");
    AgentNet net = load_agent_checkpoint(checkpoint);
    ScenarioSpec scenario = flags.resolve();
    EvalResult eval = evaluate_greedy(net, scenario, static_cast<std::uint64_t>(seed), episodes,
                                      kEpisodeCap);
    for (std::size_t i = 0; i < eval.scores.size(); ++i)
        std::printf("episode %3zu: score %.0f\n", i, eval.scores[i]);
    std::printf("mean %.6f stderr %.6f over %d episodes\n", eval.mean_score, eval.score_stderr,
                episodes);
    return 0;
}

int cmd_params(const std::string& kind_str) {
    NetKind kind = net_kind_from_string(kind_str);
    AgentNet net = make_agent_net(kind, 0);
    std::vector<LayerCount> layers = layer_counts(net.params());
    std::int64_t total = param_count(net.params());

    std::printf("%-16s %14s\n", "layer", "trainable");
    std::int64_t check = 0;
    for (const LayerCount& l : layers) {
        std::printf("%-16s %14lld\n", l.layer.c_str(), static_cast<long long>(l.count));
        check += l.count;
    }
    std::printf("%-16s %14lld\n", "total", static_cast<long long>(total));
    if (check != total) throw ContractError("per-layer sums do not match the total");

    AgentNet capsem = make_agent_net(NetKind::kCapsEm, 0);
    std::int64_t base = param_count(capsem.params());
    double pct = 100.0 * (static_cast<double>(total) - static_cast<double>(base)) /
                 static_cast<double>(base);
    std::printf("vs capsem total %lld: %+.1f%%\n", static_cast<long long>(base), pct);
    return 0;
}

int cmd_export(const std::string& metrics_dir, const std::string& out_dir) {
    int runs = export_metrics_dir(metrics_dir, out_dir);
    std::printf("exported %d run%s to %s (plus aggregate.csv)\n", runs, runs == 1 ? "" : "s",
                out_dir.c_str());
    return 0;
}

int cmd_render(const std::string& checkpoint, const ScenarioFlags& flags, long seed,
               const std::string& out_dir, int max_steps) {
    AgentNet net = load_agent_checkpoint(checkpoint);
    ScenarioSpec scenario = flags.resolve();
    fs::create_directories(out_dir);

    MazeEnv env = load_scenario(scenario.scenario, scenario.sparsity, scenario.texture,
                                static_cast<std::uint64_t>(seed));
    Tensor obs = env.reset();
    LstmState state = lstm_zero_state(kLstmHidden);
    char name[64];
    int frame = 0;
    std::snprintf(name, sizeof(name), "frame_%06d.ppm", frame++);
    write_ppm((fs::path(out_dir) / name).string(), obs);

    double score = 0.0;
    for (int t = 0; t < max_steps; ++t) {
        PolicyOutput pol = net.forward(obs, state);
        int action = 0;
        const auto& logits = pol.logits.value();
        for (int a = 1; a < kActionCount; ++a)
            if (logits[a] > logits[action]) action = a;
        StepResult sr = env.step(static_cast<Action>(action));
        std::snprintf(name, sizeof(name), "frame_%06d.ppm", frame++);
        write_ppm((fs::path(out_dir) / name).string(), sr.obs);
        obs = sr.obs;
        state = pol.state;
        score += sr.reward;
        if (sr.done) break;
    }
    std::printf("wrote %d frames (episode score %.0f) to %s\n", frame, score, out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"capsule-network actor-critic maze experiments"};
    app.require_subcommand(1);

    std::string config_path, checkpoint, out_dir, metrics_dir, net_kind = "capsem";
    long seed = 0;
    long train_seed = -1;
    int episodes = 20;
    int render_steps = kEpisodeCap;
    ScenarioFlags train_flags, eval_flags, render_flags;

    CLI::App* train_cmd = app.add_subcommand("train", "train a network on a scenario");
    train_cmd->add_option("--config", config_path, "experiment config file")
        ->required()
        ->check(CLI::ExistingFile);
    train_flags.add_to(train_cmd, false);
    train_cmd->add_option("--seed", train_seed, "override train.seed");
    train_cmd->add_option("--out", out_dir, "override out.dir");

    CLI::App* eval_cmd = app.add_subcommand("eval", "greedy evaluation of a checkpoint");
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint archive")
        ->required()
        ->check(CLI::ExistingFile);
    eval_flags.add_to(eval_cmd, true);
    eval_cmd->add_option("--seed", seed, "evaluation seed");
    eval_cmd->add_option("--episodes", episodes, "number of greedy episodes");

    CLI::App* params_cmd = app.add_subcommand("params", "per-layer trainable parameter table");
    params_cmd->add_option("--net", net_kind,
                           "net kind (capsem | capsem_ir | cnn_baseline | icm_cnn)");

    CLI::App* export_cmd = app.add_subcommand("export", "metrics streams to CSV");
    export_cmd->add_option("--metrics", metrics_dir, "directory holding *.jsonl streams")
        ->required();
    export_cmd->add_option("--out", out_dir, "output directory for CSV files")->required();

    CLI::App* render_cmd = app.add_subcommand("render", "PPM frames of one greedy episode");
    render_cmd->add_option("--checkpoint", checkpoint, "checkpoint archive")
        ->required()
        ->check(CLI::ExistingFile);
    render_flags.add_to(render_cmd, true);
    render_cmd->add_option("--seed", seed, "episode seed");
    render_cmd->add_option("--out", out_dir, "output directory for frames")->required();
    render_cmd->add_option("--max-steps", render_steps, "step cap for the rendered episode");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return cmd_train(config_path, train_flags, train_seed, out_dir);
        if (eval_cmd->parsed()) return cmd_eval(checkpoint, eval_flags, seed, episodes);
        if (params_cmd->parsed()) return cmd_params(net_kind);
        if (export_cmd->parsed()) return cmd_export(metrics_dir, out_dir);
        if (render_cmd->parsed()) return cmd_render(checkpoint, render_flags, seed, out_dir,
                                                    render_steps);
    } catch (const std::exception& e) {
        std::cerr << "capsnav: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
