#pragma once
#include <cstdint>
#include <utility>
#include <vector>

#include "mpdrive/env.hpp"
#include "mpdrive/mlp.hpp"
#include "mpdrive/replay.hpp"
#include "mpdrive/rng.hpp"

namespace mpdrive {

struct Transition {
    std::vector<double> obs, action, next_obs;
    double reward = 0.0;
    bool done = false;
};

// Linear decay from start to end over the leading fraction of a horizon,
// flat at end afterward.
struct EpsilonSchedule {
    double start = 1.0;
    double end = 0.05;
    double decay_fraction = 0.25;

    double value(std::int64_t step, std::int64_t horizon) const;
};

struct DdpgConfig {
    int obs_dim = 0;
    int action_dim = 0;
    std::vector<int> actor_hidden{400, 300};
    std::vector<int> critic_hidden{400, 300};
    bool actor_batch_norm = true;
    double actor_lr = 1e-4;
    double critic_lr = 1e-3;
    double gamma = 0.99;
    double tau = 0.01;
    double grad_clip = 10.0;
    double actor_final_init = 3e-3;
    std::size_t replay_capacity = 100000;
    int batch_size = 64;
    int warmup = 1000; // stored transitions required before updates begin

    void validate() const;
    MlpSpec actor_spec() const;  // tanh output, batch norm on hidden layers
    MlpSpec critic_spec() const; // linear output, plain relu hidden layers
};

// A trained skill's frozen networks: enough to run the greedy policy and to
// persist it.
struct PolicyNets {
    MlpSpec actor_spec, critic_spec;
    MlpParams actor, critic;

    std::vector<double> act(const std::vector<double>& obs) const;
};

// Deterministic-policy actor-critic with target networks. The critic
// regresses one-step bootstrapped values, the actor follows the critic's
// action gradient, and both target nets trail by exponential blending.
class DdpgAgent {
public:
    DdpgAgent(const DdpgConfig& cfg, std::uint64_t seed);

    const DdpgConfig& config() const { return cfg_; }

    // Greedy policy (eval-mode forward).
    std::vector<double> act(const std::vector<double>& obs) const;
    // With probability epsilon draws uniformly inside the bounds instead.
    std::vector<double> act_exploring(const std::vector<double>& obs, double epsilon,
                                      const std::vector<std::pair<double, double>>& bounds);
    double critic_value(const std::vector<double>& obs, const std::vector<double>& action) const;

    void remember(Transition t) { replay_.push(std::move(t)); }
    const ReplayBuffer<Transition>& replay() const { return replay_; }
    bool ready() const;

    // y_i = r_i + gamma * (1 - done_i) * Q'(s'_i, pi'(s'_i)), from targets.
    std::vector<double> compute_targets(const std::vector<Transition>& batch) const;
    // One gradient step on mean squared error against the targets; returns
    // the pre-step loss.
    double critic_update(const std::vector<Transition>& batch);
    // Gradient of -mean Q(s, pi(s)) with respect to the actor parameters.
    Gradients actor_gradient(const std::vector<Transition>& batch) const;
    void actor_update(const std::vector<Transition>& batch);
    void update_targets();

    // Sample a batch, update critic then actor, blend targets. Throws
    // InsufficientData before the warmup has filled.
    double train_step();

    struct EpisodeStats {
        double undiscounted_return = 0.0;
        int steps = 0;
        int updates = 0;
        double mean_critic_loss = 0.0;
        // Per-component reward sums over the episode.
        double r_vel = 0.0, r_living = 0.0, r_col = 0.0, r_goal = 0.0;
        StepInfo last_info;
    };

    // Runs the already-reset environment to termination with exploration,
    // storing transitions and training once warmed up.
    EpisodeStats train_episode(Env& env, std::vector<double> obs, double epsilon);
    // Greedy rollout; stores and trains nothing.
    EpisodeStats eval_episode(Env& env, std::vector<double> obs) const;

    PolicyNets snapshot() const;

    const MlpSpec& actor_net_spec() const { return actor_spec_; }
    const MlpSpec& critic_net_spec() const { return critic_spec_; }
    MlpParams& actor_params() { return actor_; }
    const MlpParams& actor_params() const { return actor_; }
    MlpParams& critic_params() { return critic_; }
    const MlpParams& critic_params() const { return critic_; }
    MlpParams& actor_target_params() { return actor_target_; }
    const MlpParams& actor_target_params() const { return actor_target_; }
    MlpParams& critic_target_params() { return critic_target_; }
    const MlpParams& critic_target_params() const { return critic_target_; }

private:
    Gradients actor_backward(const std::vector<Transition>& batch, ForwardCache& actor_cache) const;

    DdpgConfig cfg_;
    MlpSpec actor_spec_, critic_spec_;
    MlpParams actor_, critic_, actor_target_, critic_target_;
    AdamState actor_adam_, critic_adam_;
    ReplayBuffer<Transition> replay_;
    Rng rng_;
};

} // namespace mpdrive
