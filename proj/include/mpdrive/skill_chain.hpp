#pragma once
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mpdrive/ddpg.hpp"
#include "mpdrive/env.hpp"
#include "mpdrive/motion_primitive.hpp"
#include "mpdrive/option_sets.hpp"

namespace mpdrive {

// Start state together with whether the option policy reached its
// termination set from there within the labeling horizon.
struct LabeledState {
    std::vector<double> state;
    bool positive = false;
};

struct ChainParams {
    int label_horizon = 100;     // policy steps allowed to reach the termination set
    int label_samples = 200;     // start states labeled per primitive
    double start_sample_fraction = 0.1; // share of samples anchored at the scenario start
    double nu = 0.1;             // targeted rejection fraction of the one-class fit
    double sigma_floor = 1e-6;
    int pgd_iterations = 500;
    int max_chain_length = 8;
    int episode_budget = 200;    // training episodes per primitive
    double subgoal_bonus = 10.0; // mirrors the task goal reward
    std::vector<int> feature_dims{0, 1, 2, 3}; // host pose slice of the observation
    DdpgConfig policy; // obs/action dims are overwritten from the env

    void validate() const;
};

// Pass-through env that ends the episode with a bonus once the target set is
// entered. The check runs on the state after each step, so an episode that
// starts inside the set still takes one step. The caller keeps `beta` alive.
class SubgoalEnv final : public Env {
public:
    SubgoalEnv(Env& inner, const TerminationSet& beta, double bonus);

    int obs_dim() const override { return inner_.obs_dim(); }
    int action_dim() const override { return inner_.action_dim(); }
    std::pair<double, double> action_bounds(int i) const override {
        return inner_.action_bounds(i);
    }
    std::vector<double> reset(std::uint64_t seed) override;
    std::vector<double> reset_randomized(std::uint64_t seed) override;
    std::vector<double> canonical_start_obs() override { return inner_.canonical_start_obs(); }
    StepResult step(const std::vector<double>& action) override;
    bool done() const override { return done_; }

    bool subgoal_reached() const { return reached_; }

private:
    Env& inner_;
    const TerminationSet& beta_;
    double bonus_;
    bool done_ = true; // force a reset before the first step
    bool reached_ = false;
};

using EpisodeHook =
    std::function<void(int episode, const DdpgAgent::EpisodeStats&, bool reached)>;

struct OptionTrainResult {
    DdpgAgent agent;
    std::vector<DdpgAgent::EpisodeStats> curve; // one entry per episode
    std::vector<char> reached;                  // subgoal hit that episode
};

// Trains an intra-option policy against the wrapped env from randomized
// starts, with exploration decaying over the episode budget.
OptionTrainResult train_option_policy(Env& env, const TerminationSet& beta,
                                      const ChainParams& params, std::uint64_t seed,
                                      const EpisodeHook& on_episode = {});

// Labels start states by rolling the policy greedily: positive iff the
// termination set is entered within the horizon, counting being inside at
// the start. The leading start_sample_fraction of the samples sit at the
// scenario start itself; the rest are randomized resets advanced by a
// uniform random-action prefix of 0..label_horizon steps. The anchors keep
// the start state dense in the data, so once the policy can reach the
// target from it, the fitted region covers it.
std::vector<LabeledState> collect_labels(Env& env, const DdpgAgent& policy,
                                         const TerminationSet& beta, const ChainParams& params,
                                         std::uint64_t seed);

// One-class fit of the positive starts using the chain's kernel settings.
InitiationClassifier fit_initiation(const std::vector<std::vector<double>>& positives,
                                    const ChainParams& params);

// Fraction of negative-labeled states the classifier accepts; nullopt when
// the set has no negatives. Diagnostics only, never used for fitting.
std::optional<double> false_accept_rate(const InitiationClassifier& clf,
                                        const std::vector<LabeledState>& labeled);

struct ChainIncompleteError : std::runtime_error {
    std::vector<MotionPrimitive> partial;
    explicit ChainIncompleteError(std::vector<MotionPrimitive> chain);
    ChainIncompleteError(std::vector<MotionPrimitive> chain, const std::string& cause);
};

// Discovers primitives backward from the goal: link 0 terminates at the goal
// and link k terminates where link k-1 can start (the same classifier
// object, so adjacency is identity). Stops once the canonical start state is
// covered; throws ChainIncompleteError with the partial chain otherwise.
std::vector<MotionPrimitive> build_chain(Env& env, const TerminationSet& goal,
                                         const ChainParams& params, std::uint64_t seed,
                                         const EpisodeHook& on_episode = {});

} // namespace mpdrive
