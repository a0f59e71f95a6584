#include "mpdrive/skill_chain.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mpdrive/errors.hpp"
#include "mpdrive/rng.hpp"

namespace mpdrive {

void ChainParams::validate() const {
    if (label_horizon < 1) throw ContractViolation("label horizon must be >= 1");
    if (label_samples < 10) throw ContractViolation("need at least 10 label samples");
    if (!(start_sample_fraction >= 0.0 && start_sample_fraction <= 1.0))
        throw ContractViolation("start sample fraction must lie in [0, 1]");
    if (!(nu > 0.0 && nu <= 1.0)) throw ContractViolation("nu must lie in (0, 1]");
    if (!(sigma_floor > 0.0)) throw ContractViolation("sigma floor must be positive");
    if (pgd_iterations < 1) throw ContractViolation("pgd iterations must be positive");
    if (max_chain_length < 1) throw ContractViolation("max chain length must be >= 1");
    if (episode_budget < 1) throw ContractViolation("episode budget must be >= 1");
}

SubgoalEnv::SubgoalEnv(Env& inner, const TerminationSet& beta, double bonus)
    : inner_(inner), beta_(beta), bonus_(bonus) {}

std::vector<double> SubgoalEnv::reset(std::uint64_t seed) {
    done_ = false;
    reached_ = false;
    return inner_.reset(seed);
}

std::vector<double> SubgoalEnv::reset_randomized(std::uint64_t seed) {
    done_ = false;
    reached_ = false;
    return inner_.reset_randomized(seed);
}

StepResult SubgoalEnv::step(const std::vector<double>& action) {
    if (done_) throw ContractViolation("episode finished; reset before stepping");
    StepResult r = inner_.step(action);
    if (beta_.contains(r.obs)) {
        reached_ = true;
        r.reward += bonus_;
        r.info.goal = true;
        r.done = true;
    }
    done_ = r.done;
    return r;
}

OptionTrainResult train_option_policy(Env& env, const TerminationSet& beta,
                                      const ChainParams& params, std::uint64_t seed,
                                      const EpisodeHook& on_episode) {
    params.validate();
    DdpgConfig cfg = params.policy;
    cfg.obs_dim = env.obs_dim();
    cfg.action_dim = env.action_dim();
    cfg.validate();

    SubgoalEnv wrapped(env, beta, params.subgoal_bonus);
    OptionTrainResult out{DdpgAgent(cfg, derive_seed(seed, 5, 0)), {}, {}};
    out.curve.reserve(static_cast<std::size_t>(params.episode_budget));
    const EpsilonSchedule eps;
    for (int ep = 0; ep < params.episode_budget; ++ep) {
        auto obs = wrapped.reset_randomized(derive_seed(seed, 6, static_cast<std::uint64_t>(ep)));
        auto stats =
            out.agent.train_episode(wrapped, std::move(obs), eps.value(ep, params.episode_budget));
        out.reached.push_back(wrapped.subgoal_reached() ? 1 : 0);
        if (on_episode) on_episode(ep, stats, wrapped.subgoal_reached());
        out.curve.push_back(std::move(stats));
    }
    return out;
}

std::vector<LabeledState> collect_labels(Env& env, const DdpgAgent& policy,
                                         const TerminationSet& beta, const ChainParams& params,
                                         std::uint64_t seed) {
    params.validate();
    const auto bounds = env.all_action_bounds();
    Rng rng(derive_seed(seed, 7, 0));
    std::vector<LabeledState> out;
    out.reserve(static_cast<std::size_t>(params.label_samples));
    std::uint64_t reset_counter = 0;
    std::vector<double> walk_action(bounds.size());
    int anchors = static_cast<int>(
        std::lround(params.start_sample_fraction * static_cast<double>(params.label_samples)));
    if (params.start_sample_fraction > 0.0) anchors = std::max(anchors, 1);
    for (int i = 0; i < params.label_samples; ++i) {
        std::vector<double> obs;
        if (i < anchors) {
            obs = env.reset(derive_seed(seed, 8, reset_counter++));
        } else {
            // Random-walk prefix from a randomized reset; retry if the walk
            // ends the episode so every recorded state is a live start.
            for (int attempt = 0;; ++attempt) {
                obs = env.reset_randomized(derive_seed(seed, 8, reset_counter++));
                const int prefix = rng.uniform_int(params.label_horizon + 1);
                bool ended = false;
                for (int t = 0; t < prefix && !ended; ++t) {
                    for (std::size_t d = 0; d < bounds.size(); ++d)
                        walk_action[d] = rng.uniform(bounds[d].first, bounds[d].second);
                    auto r = env.step(walk_action);
                    obs = std::move(r.obs);
                    ended = r.done;
                }
                if (!ended) break;
                if (attempt >= 16) {
                    obs = env.reset_randomized(derive_seed(seed, 8, reset_counter++));
                    break;
                }
            }
        }

        LabeledState ls;
        ls.state = obs;
        ls.positive = beta.contains(obs);
        for (int t = 0; t < params.label_horizon && !ls.positive; ++t) {
            auto r = env.step(policy.act(obs));
            obs = std::move(r.obs);
            ls.positive = beta.contains(obs);
            if (r.done) break;
        }
        out.push_back(std::move(ls));
    }
    return out;
}

InitiationClassifier fit_initiation(const std::vector<std::vector<double>>& positives,
                                    const ChainParams& params) {
    params.validate();
    InitiationFitConfig cfg;
    cfg.nu = params.nu;
    cfg.pgd_iterations = params.pgd_iterations;
    cfg.sigma_floor = params.sigma_floor;
    return fit_initiation(positives, params.feature_dims, cfg);
}

std::optional<double> false_accept_rate(const InitiationClassifier& clf,
                                        const std::vector<LabeledState>& labeled) {
    int negatives = 0, accepted = 0;
    for (const auto& ls : labeled) {
        if (ls.positive) continue;
        ++negatives;
        accepted += clf.contains(ls.state) ? 1 : 0;
    }
    if (negatives == 0) return std::nullopt;
    return static_cast<double>(accepted) / static_cast<double>(negatives);
}

ChainIncompleteError::ChainIncompleteError(std::vector<MotionPrimitive> chain)
    : std::runtime_error("chain reached its length limit with " + std::to_string(chain.size()) +
                         " primitives before covering the start state"),
      partial(std::move(chain)) {}

ChainIncompleteError::ChainIncompleteError(std::vector<MotionPrimitive> chain,
                                           const std::string& cause)
    : std::runtime_error("chain stalled after " + std::to_string(chain.size()) +
                         " primitives: " + cause),
      partial(std::move(chain)) {}

std::vector<MotionPrimitive> build_chain(Env& env, const TerminationSet& goal,
                                         const ChainParams& params, std::uint64_t seed,
                                         const EpisodeHook& on_episode) {
    params.validate();
    const auto start = env.canonical_start_obs();
    std::vector<MotionPrimitive> chain;
    TerminationSet beta = goal;
    for (int k = 0; k < params.max_chain_length; ++k) {
        const auto link_seed = derive_seed(seed, 9, static_cast<std::uint64_t>(k));
        auto trained = train_option_policy(env, beta, params, derive_seed(link_seed, 10, 0),
                                           on_episode);
        const auto labeled =
            collect_labels(env, trained.agent, beta, params, derive_seed(link_seed, 11, 0));
        std::vector<std::vector<double>> positives;
        for (const auto& ls : labeled)
            if (ls.positive) positives.push_back(ls.state);
        std::shared_ptr<const InitiationClassifier> clf;
        try {
            clf = std::make_shared<const InitiationClassifier>(fit_initiation(positives, params));
        } catch (const InsufficientPositives& e) {
            // The link's policy never reached its target, so no region can be
            // fit and the chain cannot extend further back.
            throw ChainIncompleteError(std::move(chain), e.what());
        }

        MotionPrimitive mp;
        mp.id = k;
        mp.initiation = clf;
        mp.policy = trained.agent.snapshot();
        mp.termination = beta;
        mp.metadata.training_episodes = params.episode_budget;
        chain.push_back(std::move(mp));

        if (clf->contains(start)) return chain;
        beta = TerminationSet{std::shared_ptr<const InitiationClassifier>(clf)};
    }
    throw ChainIncompleteError(std::move(chain));
}

} // namespace mpdrive
