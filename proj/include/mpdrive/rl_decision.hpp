#pragma once
#include <cstdint>
#include <vector>

#include "mpdrive/ddpg.hpp"
#include "mpdrive/env.hpp"
#include "mpdrive/mlp.hpp"
#include "mpdrive/motion_primitive.hpp"
#include "mpdrive/replay.hpp"
#include "mpdrive/rng.hpp"

namespace mpdrive {

// One completed option invocation compressed to a decision-level step: from
// observation s the agent ran `option` for `duration` env steps, collected
// the discounted in-option return `reward`, and landed in next_s. `done`
// flags the episode ending, not the option merely terminating.
struct SmdpTransition {
    std::vector<double> s;
    int option = -1;
    double reward = 0.0; // sum of gamma^k r_k over the option's steps
    int duration = 0;    // env steps consumed, >= 1
    std::vector<double> next_s;
    bool done = false;
};

struct DecisionConfig {
    int obs_dim = 0;
    std::vector<int> hidden{256, 128};
    double lr = 1e-4;
    double gamma = 0.99;
    double tau = 1e-3;
    double grad_clip = 10.0;
    int replay_capacity = 20000;
    int batch_size = 64;
    int t_max = 200;             // per-invocation step cap for execute_option
    double new_row_range = 1e-3; // uniform bound for freshly grown output rows
    // Bootstrap with gamma^duration so long options are priced by the time
    // they consume; false reproduces the one-step plain-gamma bootstrap.
    bool smdp_gamma_power = true;
    EpsilonSchedule epsilon;

    MlpSpec net_spec(int output_width) const;
    void validate() const;
};

// Option-value network weights, as persisted beside the primitive library.
struct DecisionNetSnapshot {
    MlpSpec spec;
    MlpParams online;
    MlpParams target;
};

// Double-DQN over the option set. The output head starts empty and grows one
// row per registered option; growth copies every existing weight bit for bit
// and zeroes the new parameters' Adam accumulators, so old option values are
// invariant. Bootstrap targets let the online net pick the successor option
// and the target net price it.
class DecisionAgent {
public:
    DecisionAgent(const DecisionConfig& cfg, std::uint64_t seed);

    int option_count() const { return spec_.output_size(); }
    int grow_count() const { return grows_; }
    const DecisionConfig& config() const { return cfg_; }
    const MlpSpec& net_spec() const { return spec_; }

    // Appends one output row to both heads. The fresh row is drawn uniformly
    // from [-new_row_range, new_row_range] and shared by online and target.
    void grow_output();

    // Online / target option values at a single observation, eval mode.
    std::vector<double> q_values(const std::vector<double>& s) const;
    std::vector<double> q_values_target(const std::vector<double>& s) const;

    // Epsilon-greedy over the available subset: with probability epsilon a
    // uniform member, otherwise the best online value among `available` with
    // ties broken by lowest id. A single candidate consumes no randomness.
    // Throws NoAvailableOption when `available` is empty.
    int select_option(const std::vector<double>& s, const std::vector<int>& available,
                      double epsilon, Rng& rng) const;

    // y_i = R_i + (1 - done_i) * gamma^{d_i} * Q_target(s'_i, argmax_o Q_online(s'_i, o)).
    std::vector<double> ddqn_target(const std::vector<SmdpTransition>& batch) const;

    // Mean squared error between the targets and Q(s, taken option); one
    // clipped Adam step on the online net, then a tau soft update of the
    // target. Returns the pre-step loss.
    double decision_update(const std::vector<SmdpTransition>& batch);

    void remember(SmdpTransition t);
    std::size_t replay_size() const { return replay_.size(); }
    bool ready() const { return replay_.size() >= static_cast<std::size_t>(cfg_.batch_size); }
    // Samples batch_size transitions (with replacement) and runs one update.
    // Throws InsufficientData before `ready()`.
    double train_step();

    DecisionNetSnapshot snapshot() const;
    // Replaces both heads with the snapshot's weights. The snapshot must use
    // this agent's input width and hidden sizes; the optimizer restarts cold.
    void restore(const DecisionNetSnapshot& snap);

    MlpParams& online_params() { return online_; }
    const MlpParams& online_params() const { return online_; }
    MlpParams& target_params() { return target_; }
    const MlpParams& target_params() const { return target_; }

private:
    void validate_transition(const SmdpTransition& t, const char* who) const;

    DecisionConfig cfg_;
    MlpSpec spec_;
    MlpParams online_;
    MlpParams target_;
    AdamState adam_;
    ReplayBuffer<SmdpTransition> replay_;
    Rng rng_;
    int grows_ = 0;
};

// Everything observed while one option ran: the decision-level transition
// plus the raw per-step rewards (pre-discount) and the final step's info.
struct OptionExecution {
    SmdpTransition transition;
    std::vector<double> step_rewards;
    // Undiscounted per-component reward sums over the executed steps.
    double r_vel = 0.0, r_living = 0.0, r_col = 0.0, r_goal = 0.0;
    StepInfo last_info;
};

// Rolls mp.policy greedily from the env's current state (observation `obs`)
// for at least one step, until the termination set contains the new
// observation, the episode ends, or t_max steps elapse. The transition's
// reward is sum gamma^k r_k over the executed steps.
OptionExecution execute_option(Env& env, const MotionPrimitive& mp,
                               const std::vector<double>& obs, double gamma, int t_max = 200);

} // namespace mpdrive
