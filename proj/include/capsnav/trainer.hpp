#pragma once

#include <functional>
#include <string>
#include <vector>

#include "capsnav/maze.hpp"
#include "capsnav/nets.hpp"

namespace capsnav {

struct Transition {
    Tensor obs;
    Tensor next_obs;
    int action = 0;
    double reward_ext = 0.0;
    double reward_int = 0.0;  // 0 when the intrinsic module is off
    bool done = false;
    double value = 0.0;     // V(s_t) at collection time
    double log_prob = 0.0;  // log pi(a_t | s_t)
    double entropy = 0.0;   // policy entropy at s_t
};

struct Rollout {
    std::vector<Transition> steps;
    double bootstrap_value = 0.0;  // V(s_T), 0 if the last step ended the episode
    LstmState initial_state;       // recurrent state at the rollout's first step
    int worker_id = 0;
};

struct TrainConfig {
    double gamma = 0.99;
    double lr = 1e-4;             // shared adaptive-moment step size
    double entropy_coef = 0.01;   // beta
    double value_loss_coef = 0.5;
    int workers = 8;
    int rollout_len = 20;
    long max_env_steps = 200000;
    double grad_clip = 40.0;      // global-norm threshold
    int eval_every_updates = 25;
    int eval_episodes = 20;
    int eval_max_steps = kEpisodeCap;  // greedy-eval step budget per episode
    double early_stop_score = 0.9;
    int early_stop_patience = 3;
    int nstep = 1;                // 1 = the one-step advantage
    // Threads rollout collection across workers; the update itself always
    // runs on one thread. Sequential mode is the bit-exact reference and
    // parallel mode must match it.
    bool parallel = false;
    double icm_eta = 0.01;
    double icm_forward_coef = 0.2;
    double icm_inverse_coef = 0.8;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int frameskip = 1;
    std::uint64_t seed = 1;

    void validate() const;
};

struct ScenarioSpec {
    Scenario scenario = Scenario::kMini;
    Sparsity sparsity = Sparsity::kDense;
    TextureMode texture = TextureMode::kVaried;
};

// A = r + gamma * v_next * (1 - done) - v_t
double compute_advantage(double r_next, double v_t, double v_next, bool done, double gamma);

struct AdvantageResult {
    std::vector<double> advantages;
    std::vector<double> targets;  // advantages + values: the critic's TD targets
};

// Per-step advantages over a rollout; r is reward_ext + reward_int.
// nstep > 1 generalizes to n-step returns (off by default).
AdvantageResult advantages_and_targets(const Rollout& r, double gamma, int nstep);

// -sum_t [log pi(a_t|s_t) * A_t + beta * H_t] / T, advantages constant.
Tensor actor_loss(const std::vector<Tensor>& log_probs, const std::vector<Tensor>& entropies,
                  const std::vector<double>& advantages, double beta);

// sum_t 0.5 * (target_t - V_t)^2 / T, targets constant.
Tensor critic_loss(const std::vector<Tensor>& values, const std::vector<double>& targets);

class Adam {
  public:
    Adam(double lr, double beta1, double beta2, double eps);
    void step(std::vector<NamedParam>& trainables,
              const std::vector<std::vector<double>>& grads);
    long steps_taken() const { return t_; }

  private:
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// One rollout worker: private environment, recurrent state, action RNG.
struct Worker {
    MazeEnv env;
    LstmState lstm;
    Tensor obs;
    Tensor phi;  // cached intrinsic embedding of obs, when ICM is on
    Rng action_rng;
    int id = 0;
};

Worker make_worker(int id, const ScenarioSpec& scenario, const TrainConfig& cfg);

// Samples T actions from softmax(logits) (argmax when greedy), stepping
// the worker's private environment; the LSTM state carries across steps
// and resets on episode boundaries.
Rollout collect_rollout(AgentNet& net, Worker& w, int T, bool greedy = false);

struct UpdateMetrics {
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double intrinsic_mean = 0.0;
    double grad_norm = 0.0;
};

// Gradient of (actor + value_loss_coef * critic + ICM terms) for one
// rollout, by replaying the policy forward passes on a fresh tape.
// Result is indexed like the net's trainable parameter list.
std::vector<std::vector<double>> worker_gradient(AgentNet& net, const Rollout& rollout,
                                                 const TrainConfig& cfg, UpdateMetrics* metrics);

// Averages per-worker gradients elementwise, clips the global norm, and
// applies one optimizer step. Requires exactly cfg.workers rollouts.
UpdateMetrics sync_update(AgentNet& net, const std::vector<Rollout>& rollouts,
                          const TrainConfig& cfg, Adam& opt);

struct EvalResult {
    double mean_score = 0.0;
    double score_stderr = 0.0;
    std::vector<double> scores;
};

// Greedy policy, deterministic per seed; score per episode is the total
// external reward (0 or 1).
EvalResult evaluate_greedy(AgentNet& net, const ScenarioSpec& scenario, std::uint64_t seed,
                           int episodes, int max_steps, int frameskip = 1);

struct MetricsRecord {
    long env_steps = 0;
    long updates = 0;
    double mean_score = 0.0;
    double score_stderr = 0.0;
    double wall_ms = 0.0;
    double entropy = 0.0;
    double value_loss = 0.0;
    double policy_loss = 0.0;
    double intrinsic_mean = 0.0;
};

std::string to_json_line(const MetricsRecord& r);

struct TrainResult {
    std::vector<MetricsRecord> records;
    long env_steps = 0;
    long updates = 0;
    bool early_stopped = false;
    // env steps at the first evaluation of the early-stop streak; -1 when
    // the run never converged within budget
    long steps_to_convergence = -1;
};

// collect -> synchronous update loop with periodic greedy evaluation and
// early stopping. The caller owns checkpointing; metrics stream through
// the callback as they are produced.
TrainResult train(const TrainConfig& cfg, const ScenarioSpec& scenario, AgentNet& net,
                  const std::function<void(const MetricsRecord&)>& on_metrics = {});

}  // namespace capsnav
