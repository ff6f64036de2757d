#include "capsnav/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace capsnav {

void TrainConfig::validate() const {
    if (gamma <= 0.0 || gamma > 1.0) throw ConfigError("gamma must be in (0, 1]");
    if (lr <= 0.0) throw ConfigError("lr must be positive");
    if (entropy_coef < 0.0) throw ConfigError("entropy_coef must be >= 0");
    if (value_loss_coef < 0.0) throw ConfigError("value_loss_coef must be >= 0");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (rollout_len < 1) throw ConfigError("rollout_len must be >= 1");
    if (max_env_steps < 0) throw ConfigError("max_env_steps must be >= 0");
    if (grad_clip <= 0.0) throw ConfigError("grad_clip must be positive");
    if (eval_every_updates < 1) throw ConfigError("eval_every_updates must be >= 1");
    if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
    if (eval_max_steps < 1 || eval_max_steps > kEpisodeCap)
        throw ConfigError("eval_max_steps must be in [1, 2100]");
    if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
    if (nstep < 1) throw ConfigError("nstep must be >= 1");
    if (icm_eta <= 0.0) throw ConfigError("icm_eta must be positive");
    if (frameskip < 1) throw ConfigError("frameskip must be >= 1");
}

double compute_advantage(double r_next, double v_t, double v_next, bool done, double gamma) {
    return r_next + gamma * v_next * (done ? 0.0 : 1.0) - v_t;
}

AdvantageResult advantages_and_targets(const Rollout& r, double gamma, int nstep) {
    const int T = static_cast<int>(r.steps.size());
    if (T == 0) throw ContractError("empty rollout");
    AdvantageResult out;
    out.advantages.resize(T);
    out.targets.resize(T);
    auto value_after = [&](int t) {
        return t + 1 < T ? r.steps[t + 1].value : r.bootstrap_value;
    };
    for (int t = 0; t < T; ++t) {
        double g = 0.0, discount = 1.0;
        bool terminal = false;
        int k = 0;
        for (; k < nstep && t + k < T; ++k) {
            const Transition& tr = r.steps[t + k];
            g += discount * (tr.reward_ext + tr.reward_int);
            discount *= gamma;
            if (tr.done) {
                terminal = true;
                ++k;
                break;
            }
        }
        if (!terminal) g += discount * value_after(t + k - 1);
        out.targets[t] = g;
        out.advantages[t] = g - r.steps[t].value;
    }
    return out;
}

Tensor actor_loss(const std::vector<Tensor>& log_probs, const std::vector<Tensor>& entropies,
                  const std::vector<double>& advantages, double beta) {
    const std::size_t T = log_probs.size();
    if (T == 0 || entropies.size() != T || advantages.size() != T)
        throw ContractError("actor_loss: inconsistent lengths");
    Tensor acc = Tensor::scalar(0.0);
    for (std::size_t t = 0; t < T; ++t) {
        Tensor term = mul(log_probs[t], advantages[t]);
        if (beta != 0.0) term = add(term, mul(entropies[t], beta));
        acc = add(acc, term);
    }
    return div(neg(acc), static_cast<double>(T));
}

Tensor critic_loss(const std::vector<Tensor>& values, const std::vector<double>& targets) {
    const std::size_t T = values.size();
    if (T == 0 || targets.size() != T) throw ContractError("critic_loss: inconsistent lengths");
    Tensor acc = Tensor::scalar(0.0);
    for (std::size_t t = 0; t < T; ++t) {
        Tensor d = sub(values[t], targets[t]);
        acc = add(acc, mul(mul(d, d), 0.5));
    }
    return div(acc, static_cast<double>(T));
}

// ---- optimizer ----

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::step(std::vector<NamedParam>& trainables,
                const std::vector<std::vector<double>>& grads) {
    if (grads.size() != trainables.size()) throw ContractError("Adam: gradient list mismatch");
    if (m_.empty()) {
        m_.resize(trainables.size());
        v_.resize(trainables.size());
        for (std::size_t i = 0; i < trainables.size(); ++i) {
            m_[i].assign(trainables[i].tensor.numel(), 0.0);
            v_[i].assign(trainables[i].tensor.numel(), 0.0);
        }
    }
    ++t_;
    double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < trainables.size(); ++i) {
        auto& p = trainables[i].tensor.value();
        const auto& g = grads[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m_[i][j] = b1_ * m_[i][j] + (1.0 - b1_) * g[j];
            v_[i][j] = b2_ * v_[i][j] + (1.0 - b2_) * g[j] * g[j];
            double mhat = m_[i][j] / bc1;
            double vhat = v_[i][j] / bc2;
            p[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

// ---- rollout collection ----

Worker make_worker(int id, const ScenarioSpec& scenario, const TrainConfig& cfg) {
    Worker w{load_scenario(scenario.scenario, scenario.sparsity, scenario.texture,
                           Rng::mix(cfg.seed, 100 + static_cast<std::uint64_t>(id)),
                           cfg.frameskip),
             lstm_zero_state(kLstmHidden),
             Tensor{},
             Tensor{},
             Rng(Rng::mix(cfg.seed, 200 + static_cast<std::uint64_t>(id))),
             id};
    w.obs = w.env.reset();
    return w;
}

namespace {

int argmax_index(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

double entropy_of(const std::vector<double>& probs) {
    double h = 0.0;
    for (double p : probs)
        if (p > 0.0) h -= p * std::log(p);
    return h;
}

}  // namespace

Rollout collect_rollout(AgentNet& net, Worker& w, int T, bool greedy) {
    if (T < 1) throw ContractError("collect_rollout: T must be >= 1");
    Rollout r;
    r.worker_id = w.id;
    r.initial_state = LstmState{w.lstm.h.detached(), w.lstm.c.detached()};
    r.steps.reserve(T);

    for (int t = 0; t < T; ++t) {
        PolicyOutput out = net.forward(w.obs, w.lstm);
        std::vector<double> probs = softmax_values(out.logits.value());
        int action = greedy ? argmax_index(probs) : w.action_rng.categorical(probs);

        StepResult sr = w.env.step(static_cast<Action>(action));

        Transition tr;
        tr.obs = w.obs;
        tr.next_obs = sr.obs;
        tr.action = action;
        tr.reward_ext = sr.reward;
        tr.done = sr.done;
        tr.value = out.value.item();
        tr.log_prob = std::log(probs[action]);
        tr.entropy = entropy_of(probs);

        if (net.has_icm()) {
            if (!w.phi.defined()) w.phi = cnn_embed(w.obs, net.icm->embed);
            Tensor phi_next = cnn_embed(sr.obs, net.icm->embed);
            tr.reward_int = icm_intrinsic(w.phi, action, phi_next, *net.icm).r_intrinsic;
            w.phi = sr.done ? Tensor{} : phi_next;
        }

        w.lstm = out.state;
        w.obs = sr.obs;
        if (sr.done) {
            w.obs = w.env.reset();
            w.lstm = lstm_zero_state(kLstmHidden);
        }
        r.steps.push_back(std::move(tr));
    }

    r.bootstrap_value = r.steps.back().done ? 0.0 : net.forward(w.obs, w.lstm).value.item();
    return r;
}

// ---- updates ----

std::vector<std::vector<double>> worker_gradient(AgentNet& net, const Rollout& rollout,
                                                 const TrainConfig& cfg, UpdateMetrics* metrics) {
    const int T = static_cast<int>(rollout.steps.size());
    if (T == 0) throw ContractError("worker_gradient: empty rollout");
    if (rollout.steps.back().done && rollout.bootstrap_value != 0.0)
        throw ContractError("worker_gradient: bootstrap after a terminal step must be 0");

    std::vector<NamedParam> params = net.params();
    std::vector<NamedParam> trainables;
    for (NamedParam& p : params)
        if (p.trainable) trainables.push_back(p);
    for (NamedParam& p : trainables) p.tensor.zero_grad();

    AdvantageResult adv = advantages_and_targets(rollout, cfg.gamma, cfg.nstep);

    double policy_l = 0.0, value_l = 0.0, entropy_v = 0.0;
    {
        Tape tape;
        LstmState state{rollout.initial_state.h.detached(), rollout.initial_state.c.detached()};
        std::vector<Tensor> log_probs, entropies, values;
        log_probs.reserve(T);
        entropies.reserve(T);
        values.reserve(T);
        for (int t = 0; t < T; ++t) {
            const Transition& tr = rollout.steps[t];
            PolicyOutput out = net.forward(tr.obs, state);
            Tensor logp = log_softmax(out.logits);
            log_probs.push_back(pick(logp, tr.action));
            entropies.push_back(neg(sum(mul(exp(logp), logp))));
            values.push_back(out.value);
            state = out.state;
            if (tr.done) state = lstm_zero_state(kLstmHidden);
        }
        Tensor pi_loss = actor_loss(log_probs, entropies, adv.advantages, cfg.entropy_coef);
        Tensor v_loss = critic_loss(values, adv.targets);
        Tensor loss = add(pi_loss, mul(v_loss, cfg.value_loss_coef));

        if (net.has_icm()) {
            Tensor fwd_acc = Tensor::scalar(0.0);
            Tensor inv_acc = Tensor::scalar(0.0);
            for (const Transition& tr : rollout.steps) {
                Tensor phi_t = cnn_embed(tr.obs, net.icm->embed);
                Tensor phi_next = cnn_embed(tr.next_obs, net.icm->embed);
                IcmOutput icm = icm_intrinsic(phi_t, tr.action, phi_next, *net.icm);
                fwd_acc = add(fwd_acc, icm.fwd_loss);
                inv_acc = add(inv_acc, neg(pick(log_softmax(icm.inv_logits), tr.action)));
            }
            Tensor icm_loss = add(mul(div(fwd_acc, static_cast<double>(T)), cfg.icm_forward_coef),
                                  mul(div(inv_acc, static_cast<double>(T)), cfg.icm_inverse_coef));
            loss = add(loss, icm_loss);
        }

        tape.backward(loss);
        policy_l = pi_loss.item();
        value_l = v_loss.item();
        for (const Tensor& e : entropies) entropy_v += e.item();
        entropy_v /= T;
    }

    std::vector<std::vector<double>> grads;
    grads.reserve(trainables.size());
    for (NamedParam& p : trainables) {
        grads.push_back(p.tensor.grad());
        p.tensor.zero_grad();
    }

    if (metrics) {
        metrics->policy_loss = policy_l;
        metrics->value_loss = value_l;
        metrics->entropy = entropy_v;
        double ri = 0.0;
        for (const Transition& tr : rollout.steps) ri += tr.reward_int;
        metrics->intrinsic_mean = ri / T;
    }
    return grads;
}

UpdateMetrics sync_update(AgentNet& net, const std::vector<Rollout>& rollouts,
                          const TrainConfig& cfg, Adam& opt) {
    if (static_cast<int>(rollouts.size()) != cfg.workers)
        throw ContractError("sync_update: expected " + std::to_string(cfg.workers) +
                            " rollouts, got " + std::to_string(rollouts.size()));

    std::vector<NamedParam> params = net.params();
    std::vector<NamedParam> trainables;
    for (NamedParam& p : params)
        if (p.trainable) trainables.push_back(p);

    // One updater thread does every replay: backward passes accumulate
    // into the shared parameter grad buffers, so they must not interleave.
    const int N = cfg.workers;
    std::vector<UpdateMetrics> worker_metrics(N);
    std::vector<std::vector<std::vector<double>>> worker_grads(N);
    for (int w = 0; w < N; ++w)
        worker_grads[w] = worker_gradient(net, rollouts[w], cfg, &worker_metrics[w]);

    // average with extended precision so N identical gradients average to
    // the single-worker gradient bit-exactly
    std::vector<std::vector<double>> avg(trainables.size());
    for (std::size_t i = 0; i < trainables.size(); ++i) {
        std::size_t n = worker_grads[0][i].size();
        std::vector<long double> acc(n, 0.0L);
        for (int w = 0; w < N; ++w)
            for (std::size_t j = 0; j < n; ++j) acc[j] += worker_grads[w][i][j];
        avg[i].resize(n);
        for (std::size_t j = 0; j < n; ++j)
            avg[i][j] = static_cast<double>(acc[j] / static_cast<long double>(N));
    }

    double norm_sq = 0.0;
    for (const auto& g : avg)
        for (double v : g) norm_sq += v * v;
    double norm = std::sqrt(norm_sq);
    if (norm > cfg.grad_clip) {
        double scale = cfg.grad_clip / norm;
        for (auto& g : avg)
            for (double& v : g) v *= scale;
    }

    opt.step(trainables, avg);

    UpdateMetrics out;
    for (int w = 0; w < N; ++w) {
        out.policy_loss += worker_metrics[w].policy_loss / N;
        out.value_loss += worker_metrics[w].value_loss / N;
        out.entropy += worker_metrics[w].entropy / N;
        out.intrinsic_mean += worker_metrics[w].intrinsic_mean / N;
    }
    out.grad_norm = norm;
    return out;
}

// ---- evaluation ----

EvalResult evaluate_greedy(AgentNet& net, const ScenarioSpec& scenario, std::uint64_t seed,
                           int episodes, int max_steps, int frameskip) {
    if (episodes < 1) throw ContractError("evaluate_greedy: episodes must be >= 1");
    MazeEnv env = load_scenario(scenario.scenario, scenario.sparsity, scenario.texture, seed,
                                frameskip);
    EvalResult out;
    out.scores.reserve(episodes);
    for (int ep = 0; ep < episodes; ++ep) {
        Tensor obs = env.reset();
        LstmState state = lstm_zero_state(kLstmHidden);
        double score = 0.0;
        for (int t = 0; t < max_steps; ++t) {
            PolicyOutput pol = net.forward(obs, state);
            int action = argmax_index(pol.logits.value());
            StepResult sr = env.step(static_cast<Action>(action));
            score += sr.reward;
            obs = sr.obs;
            state = pol.state;
            if (sr.done) break;
        }
        if (!env.state().done) {
            // episode truncated by the eval budget: abandon it cleanly
            env.reset();
        }
        out.scores.push_back(score);
    }
    double mean = 0.0;
    for (double s : out.scores) mean += s;
    mean /= episodes;
    double var = 0.0;
    for (double s : out.scores) var += (s - mean) * (s - mean);
    out.mean_score = mean;
    out.score_stderr = episodes > 1 ? std::sqrt(var / (episodes - 1)) / std::sqrt(episodes) : 0.0;
    return out;
}

// ---- training loop ----

std::string to_json_line(const MetricsRecord& r) {
    nlohmann::json j{{"env_steps", r.env_steps},
                     {"updates", r.updates},
                     {"mean_score", r.mean_score},
                     {"score_stderr", r.score_stderr},
                     {"wall_ms", r.wall_ms},
                     {"entropy", r.entropy},
                     {"value_loss", r.value_loss},
                     {"policy_loss", r.policy_loss},
                     {"intrinsic_mean", r.intrinsic_mean}};
    return j.dump();
}

TrainResult train(const TrainConfig& cfg, const ScenarioSpec& scenario, AgentNet& net,
                  const std::function<void(const MetricsRecord&)>& on_metrics) {
    cfg.validate();
    auto t0 = std::chrono::steady_clock::now();

    std::vector<Worker> workers;
    workers.reserve(cfg.workers);
    for (int w = 0; w < cfg.workers; ++w) workers.push_back(make_worker(w, scenario, cfg));

    Adam opt(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

    TrainResult result;
    UpdateMetrics last_update;
    int streak = 0;
    long streak_start_steps = -1;

    while (result.env_steps < cfg.max_env_steps) {
        std::vector<Rollout> rollouts(cfg.workers);
        if (cfg.parallel && cfg.workers > 1) {
            std::vector<std::thread> threads;
            threads.reserve(cfg.workers);
            for (int w = 0; w < cfg.workers; ++w)
                threads.emplace_back([&, w] {
                    rollouts[w] = collect_rollout(net, workers[w], cfg.rollout_len);
                });
            for (auto& t : threads) t.join();
        } else {
            for (int w = 0; w < cfg.workers; ++w)
                rollouts[w] = collect_rollout(net, workers[w], cfg.rollout_len);
        }
        result.env_steps += static_cast<long>(cfg.workers) * cfg.rollout_len * cfg.frameskip;

        last_update = sync_update(net, rollouts, cfg, opt);
        result.updates++;

        if (result.updates % cfg.eval_every_updates == 0) {
            EvalResult eval =
                evaluate_greedy(net, scenario, Rng::mix(cfg.seed, 9000 + result.updates),
                                cfg.eval_episodes, cfg.eval_max_steps, cfg.frameskip);
            MetricsRecord rec;
            rec.env_steps = result.env_steps;
            rec.updates = result.updates;
            rec.mean_score = eval.mean_score;
            rec.score_stderr = eval.score_stderr;
            rec.wall_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
            rec.entropy = last_update.entropy;
            rec.value_loss = last_update.value_loss;
            rec.policy_loss = last_update.policy_loss;
            rec.intrinsic_mean = last_update.intrinsic_mean;
            result.records.push_back(rec);
            if (on_metrics) on_metrics(rec);

            if (eval.mean_score >= cfg.early_stop_score) {
                if (streak == 0) streak_start_steps = result.env_steps;
                ++streak;
                if (streak >= cfg.early_stop_patience) {
                    result.early_stopped = true;
                    result.steps_to_convergence = streak_start_steps;
                    break;
                }
            } else {
                streak = 0;
                streak_start_steps = -1;
            }
        }
    }
    return result;
}

}  // namespace capsnav
