#include "mpdrive/harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <unordered_map>

#include "mpdrive/errors.hpp"
#include "mpdrive/rng.hpp"
#include "mpdrive/toy_envs.hpp"

namespace fs = std::filesystem;

namespace mpdrive {

namespace {

constexpr const char* kPhaseNames[] = {"constant_speed", "lane_change", "left_turn_oncoming",
                                       "turn_around", "mixed_test"};

std::string format_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Shared per-episode environment seed so every method replays the same
// worlds at the same (phase, epoch) slot.
std::uint64_t episode_seed(std::uint64_t run_seed, std::size_t phase_idx, int epoch) {
    return derive_seed(run_seed, 0x5EED0000ull + phase_idx, static_cast<std::uint64_t>(epoch));
}

// The task goal ball in observation coordinates; positions scale by the
// shared observation divisor, so the boundary matches the env's goal test.
TerminationSet task_goal(const ScenarioConfig& c) {
    return TerminationSet{GoalRegion{{0, 1},
                                     {c.goal_x / kPositionScale, c.goal_y / kPositionScale},
                                     c.goal_radius / kPositionScale}};
}

EpisodeLog log_from_stats(const std::string& phase, int epoch,
                          const DdpgAgent::EpisodeStats& st,
                          const std::array<bool, kNumSubtasks>& present,
                          std::uint64_t run_seed) {
    EpisodeLog e;
    e.phase = phase;
    e.epoch = epoch;
    e.steps = st.steps;
    e.undiscounted_return = st.undiscounted_return;
    e.r_vel = st.r_vel;
    e.r_living = st.r_living;
    e.r_col = st.r_col;
    e.r_goal = st.r_goal;
    for (std::size_t k = 0; k < kNumSubtasks; ++k)
        e.success[k] = present[k] ? (st.last_info.zone_passed[k] ? 1 : 0) : -1;
    e.goal = st.last_info.goal;
    e.collision = st.last_info.collision;
    e.seed = run_seed;
    return e;
}

void finish_log(EpisodeLog& e, const StepInfo& last,
                const std::array<bool, kNumSubtasks>& present) {
    for (std::size_t k = 0; k < kNumSubtasks; ++k)
        e.success[k] = present[k] ? (last.zone_passed[k] ? 1 : 0) : -1;
    e.goal = last.goal;
    e.collision = last.collision;
}

// Greedy chain-following evaluation: run the accepting option with the
// largest id (the newest, start-most link); when nothing accepts, stay on
// the last executed link so the episode can recover.
EpisodeLog run_greedy_chain_episode(IntersectionEnv& env, std::uint64_t env_seed,
                                    const Library& lib, double gamma, int t_max,
                                    const std::string& phase, int epoch,
                                    std::uint64_t run_seed) {
    std::vector<double> obs = env.reset(env_seed);
    EpisodeLog e;
    e.phase = phase;
    e.epoch = epoch;
    e.seed = run_seed;
    int current = static_cast<int>(lib.mps.size()) - 1;
    StepInfo last;
    bool done = false;
    while (!done) {
        std::vector<int> avail = available_options(lib, obs);
        int pick = avail.empty() ? current : avail.back();
        current = pick;
        OptionExecution ex =
            execute_option(env, lib.mps[static_cast<std::size_t>(pick)], obs, gamma, t_max);
        e.steps += ex.transition.duration;
        for (double r : ex.step_rewards) e.undiscounted_return += r;
        e.r_vel += ex.r_vel;
        e.r_living += ex.r_living;
        e.r_col += ex.r_col;
        e.r_goal += ex.r_goal;
        last = ex.last_info;
        obs = std::move(ex.transition.next_s);
        done = ex.transition.done;
    }
    finish_log(e, last, present_subtasks(env.world()));
    return e;
}

// One episode driven by the decision layer over the library's options.
EpisodeLog run_decision_episode(IntersectionEnv& env, std::uint64_t env_seed, const Library& lib,
                                DecisionAgent& agent, double eps, bool learn, Rng& rng,
                                const std::string& phase, int epoch, std::uint64_t run_seed,
                                int* fallback_count) {
    std::vector<double> obs = env.reset(env_seed);
    EpisodeLog e;
    e.phase = phase;
    e.epoch = epoch;
    e.seed = run_seed;
    StepInfo last;
    bool done = false;
    while (!done) {
        std::vector<int> avail = available_options(lib, obs);
        if (avail.empty()) {
            // No initiation set covers this state; offer everything rather
            // than stall, and count the event.
            avail.resize(lib.mps.size());
            std::iota(avail.begin(), avail.end(), 0);
            if (fallback_count != nullptr) ++*fallback_count;
        }
        int opt = agent.select_option(obs, avail, eps, rng);
        OptionExecution ex = execute_option(env, lib.mps[static_cast<std::size_t>(opt)], obs,
                                            agent.config().gamma, agent.config().t_max);
        if (learn) {
            agent.remember(ex.transition);
            if (agent.ready()) agent.train_step();
        }
        e.steps += ex.transition.duration;
        for (double r : ex.step_rewards) e.undiscounted_return += r;
        e.r_vel += ex.r_vel;
        e.r_living += ex.r_living;
        e.r_col += ex.r_col;
        e.r_goal += ex.r_goal;
        last = ex.last_info;
        obs = std::move(ex.transition.next_s);
        done = ex.transition.done;
    }
    finish_log(e, last, present_subtasks(env.world()));
    return e;
}

void persist_run(const RunConfig& cfg, const Library& lib, const std::vector<EpisodeLog>& logs) {
    fs::create_directories(cfg.out_dir);
    save_library(lib, (fs::path(cfg.out_dir) / "library").string());
    write_episode_csv((fs::path(cfg.out_dir) / "episodes.csv").string(), logs);
    std::ofstream f(fs::path(cfg.out_dir) / "config.json", std::ios::trunc);
    f << run_config_to_json(cfg).dump(2) << '\n';
}

// --- config json -------------------------------------------------------------

void require_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                  const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw FormatError("unknown " + where + " key: " + key);
    }
}

template <typename T, std::size_t N>
void read_array(const nlohmann::json& j, const char* key, std::array<T, N>& out) {
    if (!j.contains(key)) return;
    auto v = j.at(key).get<std::vector<T>>();
    if (v.size() != N)
        throw FormatError(std::string(key) + " needs exactly " + std::to_string(N) + " entries");
    std::copy(v.begin(), v.end(), out.begin());
}

nlohmann::json scenario_to_json(const ScenarioConfig& c) {
    return nlohmann::json{{"lane_width", c.lane_width},
                          {"arm_length", c.arm_length},
                          {"vehicle_length", c.vehicle_length},
                          {"vehicle_width", c.vehicle_width},
                          {"subtasks", c.subtasks},
                          {"presence_probability", c.presence_probability},
                          {"move_probability", c.move_probability},
                          {"speed_lo", c.speed_lo},
                          {"speed_hi", c.speed_hi},
                          {"start_offset_max", c.start_offset_max},
                          {"dt", c.dt},
                          {"max_steps", c.max_steps},
                          {"goal_x", c.goal_x},
                          {"goal_y", c.goal_y},
                          {"goal_radius", c.goal_radius},
                          {"v_goal", c.v_goal}};
}

ScenarioConfig scenario_from_json(const nlohmann::json& j, ScenarioConfig c) {
    require_keys(j,
                 {"lane_width", "arm_length", "vehicle_length", "vehicle_width", "subtasks",
                  "presence_probability", "move_probability", "speed_lo", "speed_hi",
                  "start_offset_max", "dt", "max_steps", "goal_x", "goal_y", "goal_radius",
                  "v_goal"},
                 "scenario");
    c.lane_width = j.value("lane_width", c.lane_width);
    c.arm_length = j.value("arm_length", c.arm_length);
    c.vehicle_length = j.value("vehicle_length", c.vehicle_length);
    c.vehicle_width = j.value("vehicle_width", c.vehicle_width);
    read_array(j, "subtasks", c.subtasks);
    read_array(j, "presence_probability", c.presence_probability);
    c.move_probability = j.value("move_probability", c.move_probability);
    c.speed_lo = j.value("speed_lo", c.speed_lo);
    c.speed_hi = j.value("speed_hi", c.speed_hi);
    c.start_offset_max = j.value("start_offset_max", c.start_offset_max);
    c.dt = j.value("dt", c.dt);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.goal_x = j.value("goal_x", c.goal_x);
    c.goal_y = j.value("goal_y", c.goal_y);
    c.goal_radius = j.value("goal_radius", c.goal_radius);
    c.v_goal = j.value("v_goal", c.v_goal);
    return c;
}

nlohmann::json ddpg_to_json(const DdpgConfig& c) {
    return nlohmann::json{{"actor_hidden", c.actor_hidden},
                          {"critic_hidden", c.critic_hidden},
                          {"actor_batch_norm", c.actor_batch_norm},
                          {"actor_lr", c.actor_lr},
                          {"critic_lr", c.critic_lr},
                          {"gamma", c.gamma},
                          {"tau", c.tau},
                          {"grad_clip", c.grad_clip},
                          {"actor_final_init", c.actor_final_init},
                          {"replay_capacity", c.replay_capacity},
                          {"batch_size", c.batch_size},
                          {"warmup", c.warmup}};
}

DdpgConfig ddpg_from_json(const nlohmann::json& j, DdpgConfig c) {
    require_keys(j,
                 {"actor_hidden", "critic_hidden", "actor_batch_norm", "actor_lr", "critic_lr",
                  "gamma", "tau", "grad_clip", "actor_final_init", "replay_capacity",
                  "batch_size", "warmup"},
                 "execution");
    c.actor_hidden = j.value("actor_hidden", c.actor_hidden);
    c.critic_hidden = j.value("critic_hidden", c.critic_hidden);
    c.actor_batch_norm = j.value("actor_batch_norm", c.actor_batch_norm);
    c.actor_lr = j.value("actor_lr", c.actor_lr);
    c.critic_lr = j.value("critic_lr", c.critic_lr);
    c.gamma = j.value("gamma", c.gamma);
    c.tau = j.value("tau", c.tau);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.actor_final_init = j.value("actor_final_init", c.actor_final_init);
    c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.warmup = j.value("warmup", c.warmup);
    return c;
}

nlohmann::json epsilon_to_json(const EpsilonSchedule& s) {
    return nlohmann::json{
        {"start", s.start}, {"end", s.end}, {"decay_fraction", s.decay_fraction}};
}

EpsilonSchedule epsilon_from_json(const nlohmann::json& j, EpsilonSchedule s) {
    require_keys(j, {"start", "end", "decay_fraction"}, "epsilon");
    s.start = j.value("start", s.start);
    s.end = j.value("end", s.end);
    s.decay_fraction = j.value("decay_fraction", s.decay_fraction);
    return s;
}

nlohmann::json decision_to_json(const DecisionConfig& c) {
    return nlohmann::json{{"hidden", c.hidden},
                          {"lr", c.lr},
                          {"gamma", c.gamma},
                          {"tau", c.tau},
                          {"grad_clip", c.grad_clip},
                          {"replay_capacity", c.replay_capacity},
                          {"batch_size", c.batch_size},
                          {"t_max", c.t_max},
                          {"new_row_range", c.new_row_range},
                          {"smdp_gamma_power", c.smdp_gamma_power},
                          {"epsilon", epsilon_to_json(c.epsilon)}};
}

DecisionConfig decision_from_json(const nlohmann::json& j, DecisionConfig c) {
    require_keys(j,
                 {"hidden", "lr", "gamma", "tau", "grad_clip", "replay_capacity", "batch_size",
                  "t_max", "new_row_range", "smdp_gamma_power", "epsilon"},
                 "decision");
    c.hidden = j.value("hidden", c.hidden);
    c.lr = j.value("lr", c.lr);
    c.gamma = j.value("gamma", c.gamma);
    c.tau = j.value("tau", c.tau);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.t_max = j.value("t_max", c.t_max);
    c.new_row_range = j.value("new_row_range", c.new_row_range);
    c.smdp_gamma_power = j.value("smdp_gamma_power", c.smdp_gamma_power);
    if (j.contains("epsilon")) c.epsilon = epsilon_from_json(j.at("epsilon"), c.epsilon);
    return c;
}

nlohmann::json chain_to_json(const ChainParams& c) {
    return nlohmann::json{{"label_horizon", c.label_horizon},
                          {"label_samples", c.label_samples},
                          {"start_sample_fraction", c.start_sample_fraction},
                          {"nu", c.nu},
                          {"sigma_floor", c.sigma_floor},
                          {"pgd_iterations", c.pgd_iterations},
                          {"max_chain_length", c.max_chain_length},
                          {"episode_budget", c.episode_budget},
                          {"subgoal_bonus", c.subgoal_bonus},
                          {"feature_dims", c.feature_dims}};
}

ChainParams chain_from_json(const nlohmann::json& j, ChainParams c) {
    require_keys(j,
                 {"label_horizon", "label_samples", "start_sample_fraction", "nu", "sigma_floor",
                  "pgd_iterations", "max_chain_length", "episode_budget", "subgoal_bonus",
                  "feature_dims"},
                 "chain");
    c.label_horizon = j.value("label_horizon", c.label_horizon);
    c.label_samples = j.value("label_samples", c.label_samples);
    c.start_sample_fraction = j.value("start_sample_fraction", c.start_sample_fraction);
    c.nu = j.value("nu", c.nu);
    c.sigma_floor = j.value("sigma_floor", c.sigma_floor);
    c.pgd_iterations = j.value("pgd_iterations", c.pgd_iterations);
    c.max_chain_length = j.value("max_chain_length", c.max_chain_length);
    c.episode_budget = j.value("episode_budget", c.episode_budget);
    c.subgoal_bonus = j.value("subgoal_bonus", c.subgoal_bonus);
    c.feature_dims = j.value("feature_dims", c.feature_dims);
    return c;
}

nlohmann::json phase_to_json(const PhaseSpec& p) {
    return nlohmann::json{{"kind", phase_kind_name(p.kind)},
                          {"epochs", p.epochs},
                          {"presence_probability", p.presence_probability}};
}

PhaseSpec phase_from_json(const nlohmann::json& j) {
    require_keys(j, {"kind", "epochs", "presence_probability"}, "phase");
    PhaseSpec p;
    if (!j.contains("kind")) throw FormatError("phase entry needs a kind");
    p.kind = phase_kind_from_name(j.at("kind").get<std::string>());
    p.epochs = j.value("epochs", p.epochs);
    p.presence_probability = j.value("presence_probability", p.presence_probability);
    return p;
}

} // namespace

const char* phase_kind_name(PhaseKind k) { return kPhaseNames[static_cast<int>(k)]; }

PhaseKind phase_kind_from_name(const std::string& name) {
    for (int i = 0; i < 5; ++i)
        if (name == kPhaseNames[i]) return static_cast<PhaseKind>(i);
    throw FormatError("unknown phase kind: " + name);
}

void PhaseSpec::validate() const {
    if (epochs < 1) throw ContractViolation("phase epochs must be >= 1");
    if (!(presence_probability >= 0.0 && presence_probability <= 1.0))
        throw ContractViolation("presence probability outside [0, 1]");
}

RunConfig::RunConfig() {
    phases = {{PhaseKind::constant_speed, 400, 0.5},
              {PhaseKind::lane_change, 400, 0.5},
              {PhaseKind::left_turn_oncoming, 400, 0.5},
              {PhaseKind::turn_around, 400, 0.5},
              {PhaseKind::mixed_test, 1000, 0.5}};
    execution.obs_dim = kObsDim;
    execution.action_dim = 1;
    decision.obs_dim = kObsDim;
    // Scene features are what tell scenarios apart, so initiation sets see
    // the whole observation rather than the host-pose slice.
    chain.feature_dims = {};
    chain.policy = execution;
}

void RunConfig::validate() const {
    if (phases.empty()) throw ContractViolation("need at least one phase");
    if (seeds.empty()) throw ContractViolation("need at least one seed");
    if (!(scale > 0.0 && scale <= 1.0)) throw ContractViolation("scale factor outside (0, 1]");
    if (success_window < 1) throw ContractViolation("success window must be >= 1");
    if (consolidation_episodes < 0)
        throw ContractViolation("consolidation episodes must be >= 0");
    scenario.validate();
    for (const PhaseSpec& p : phases) p.validate();
    DdpgConfig e = execution;
    e.obs_dim = kObsDim;
    e.action_dim = 1;
    e.validate();
    DecisionConfig d = decision;
    d.obs_dim = kObsDim;
    d.validate();
    ChainParams ch = chain;
    ch.policy = e;
    ch.validate();
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    require_keys(j,
                 {"scenario", "phases", "seeds", "execution", "decision", "chain", "out_dir",
                  "scale", "success_window", "train_decision_during_test",
                  "consolidation_episodes"},
                 "config");
    RunConfig cfg;
    if (j.contains("scenario")) cfg.scenario = scenario_from_json(j.at("scenario"), cfg.scenario);
    if (j.contains("phases")) {
        cfg.phases.clear();
        for (const auto& entry : j.at("phases")) cfg.phases.push_back(phase_from_json(entry));
    }
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("execution")) cfg.execution = ddpg_from_json(j.at("execution"), cfg.execution);
    if (j.contains("decision")) cfg.decision = decision_from_json(j.at("decision"), cfg.decision);
    if (j.contains("chain")) cfg.chain = chain_from_json(j.at("chain"), cfg.chain);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.scale = j.value("scale", cfg.scale);
    cfg.success_window = j.value("success_window", cfg.success_window);
    cfg.train_decision_during_test =
        j.value("train_decision_during_test", cfg.train_decision_during_test);
    cfg.consolidation_episodes = j.value("consolidation_episodes", cfg.consolidation_episodes);
    cfg.chain.policy = cfg.execution;
    return cfg;
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json phases = nlohmann::json::array();
    for (const PhaseSpec& p : cfg.phases) phases.push_back(phase_to_json(p));
    return nlohmann::json{{"scenario", scenario_to_json(cfg.scenario)},
                          {"phases", phases},
                          {"seeds", cfg.seeds},
                          {"execution", ddpg_to_json(cfg.execution)},
                          {"decision", decision_to_json(cfg.decision)},
                          {"chain", chain_to_json(cfg.chain)},
                          {"out_dir", cfg.out_dir},
                          {"scale", cfg.scale},
                          {"success_window", cfg.success_window},
                          {"train_decision_during_test", cfg.train_decision_during_test},
                          {"consolidation_episodes", cfg.consolidation_episodes}};
}

int scaled_epochs(int epochs, double scale) {
    return static_cast<int>(std::max(1ll, std::llround(epochs * scale)));
}

ScenarioConfig scenario_for_phase(const ScenarioConfig& base, const PhaseSpec& phase) {
    ScenarioConfig c = base;
    c.subtasks = {false, false, false};
    c.presence_probability = {1.0, 1.0, 1.0};
    switch (phase.kind) {
        case PhaseKind::constant_speed:
            break;
        case PhaseKind::lane_change:
            c.subtasks[0] = true;
            break;
        case PhaseKind::left_turn_oncoming:
            c.subtasks[1] = true;
            break;
        case PhaseKind::turn_around:
            c.subtasks[2] = true;
            break;
        case PhaseKind::mixed_test:
            c.subtasks = {true, true, true};
            c.presence_probability = {phase.presence_probability, phase.presence_probability,
                                      phase.presence_probability};
            break;
    }
    return c;
}

RunResult run_offline(const RunConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DdpgConfig ecfg = cfg.execution;
    ecfg.obs_dim = kObsDim;
    ecfg.action_dim = 1;
    DecisionConfig dcfg = cfg.decision;
    dcfg.obs_dim = kObsDim;

    RunResult result;
    Library& lib = result.library;
    DecisionAgent decision(dcfg, derive_seed(seed, 0xDC, 0));
    GrowNotify on_grow = [&](int total) {
        while (decision.option_count() < total) {
            decision.grow_output();
            result.decision_grow_count += 1;
        }
    };

    auto save_partial = [&]() {
        lib.decision = decision.snapshot();
        persist_run(cfg, lib, result.logs);
    };

    for (std::size_t phase_idx = 0; phase_idx < cfg.phases.size(); ++phase_idx) {
        const PhaseSpec& phase = cfg.phases[phase_idx];
        if (phase.kind == PhaseKind::mixed_test) continue;
        const std::string name = phase_kind_name(phase.kind);
        const int budget = scaled_epochs(phase.epochs, cfg.scale);
        IntersectionEnv env(scenario_for_phase(cfg.scenario, phase));
        const std::vector<double> probe = env.canonical_start_obs();
        const TerminationSet goal = task_goal(cfg.scenario);

        int epoch = 0;
        EpisodeHook hook = [&](int, const DdpgAgent::EpisodeStats& st, bool) {
            if (epoch >= budget) return;
            result.logs.push_back(
                log_from_stats(name, epoch, st, present_subtasks(env.world()), seed));
            ++epoch;
        };
        ChainParams params = cfg.chain;
        params.policy = ecfg;
        params.episode_budget = std::max(1, budget / cfg.chain.max_chain_length);
        MpFactory factory = [&]() {
            return build_chain(env, goal, params, derive_seed(seed, 0xC4, phase_idx), hook);
        };
        try {
            match_or_create(lib, probe, factory, name, static_cast<int>(phase_idx), on_grow);
        } catch (const ChainIncompleteError&) {
            save_partial();
            throw;
        }
        // Leftover phase budget becomes greedy evaluation episodes.
        for (; epoch < budget; ++epoch)
            result.logs.push_back(run_greedy_chain_episode(
                env, episode_seed(seed, phase_idx, epoch), lib, dcfg.gamma, dcfg.t_max, name,
                epoch, seed));
    }

    // Unlogged consolidation pass: the decision layer learns to pick among
    // the finished primitives under mixed traffic.
    if (cfg.consolidation_episodes > 0 && !lib.mps.empty()) {
        PhaseSpec mixed{PhaseKind::mixed_test, 1, 0.5};
        for (const PhaseSpec& p : cfg.phases)
            if (p.kind == PhaseKind::mixed_test) mixed = p;
        IntersectionEnv env(scenario_for_phase(cfg.scenario, mixed));
        const int budget = scaled_epochs(cfg.consolidation_episodes, cfg.scale);
        Rng explore(derive_seed(seed, 0xA0, 0));
        for (int j = 0; j < budget; ++j) {
            double eps = dcfg.epsilon.value(j, budget);
            run_decision_episode(env, derive_seed(seed, 0xC0507, static_cast<std::uint64_t>(j)),
                                 lib, decision, eps, true, explore, "consolidation", j, seed,
                                 nullptr);
        }
    }

    lib.decision = decision.snapshot();
    persist_run(cfg, lib, result.logs);
    return result;
}

std::vector<EpisodeLog> run_test(const RunConfig& cfg, const Library& lib, std::uint64_t seed,
                                 int* fallback_count) {
    cfg.validate();
    if (lib.mps.empty()) throw ContractViolation("run_test: the library holds no primitives");
    if (fallback_count != nullptr) *fallback_count = 0;
    DecisionConfig dcfg = cfg.decision;
    dcfg.obs_dim = kObsDim;
    DecisionAgent agent(dcfg, derive_seed(seed, 0xDC, 1));
    if (lib.decision) {
        agent.restore(*lib.decision);
        if (agent.option_count() != static_cast<int>(lib.mps.size()))
            throw ContractViolation("stored decision head width does not match the library");
    } else {
        while (agent.option_count() < static_cast<int>(lib.mps.size())) agent.grow_output();
    }

    std::vector<EpisodeLog> logs;
    Rng explore(derive_seed(seed, 0xA0, 1));
    const double eps = cfg.train_decision_during_test ? dcfg.epsilon.end : 0.0;
    for (std::size_t phase_idx = 0; phase_idx < cfg.phases.size(); ++phase_idx) {
        const PhaseSpec& phase = cfg.phases[phase_idx];
        if (phase.kind != PhaseKind::mixed_test) continue;
        const int budget = scaled_epochs(phase.epochs, cfg.scale);
        IntersectionEnv env(scenario_for_phase(cfg.scenario, phase));
        for (int j = 0; j < budget; ++j)
            logs.push_back(run_decision_episode(
                env, episode_seed(seed, phase_idx, j), lib, agent, eps,
                cfg.train_decision_during_test, explore, phase_kind_name(phase.kind), j, seed,
                fallback_count));
    }
    return logs;
}

namespace {

// Five throttle levels over the binned relative state: nearest-vehicle
// offset 7x7 over +-30 m, host speed 5 bins over [0,10] m/s, relative yaw 8
// bins. Unseen states read as all-zero action values.
struct TabularQ {
    static constexpr int kActions = 5;
    static constexpr double kLevels[kActions] = {-1.0, -0.5, 0.0, 0.5, 1.0};
    double alpha = 0.1;
    double gamma = 0.99;
    std::unordered_map<std::uint32_t, std::array<double, kActions>> table;

    static int bin(double v, double lo, double hi, int n) {
        double t = (v - lo) / (hi - lo);
        int b = static_cast<int>(std::floor(t * n));
        return std::clamp(b, 0, n - 1);
    }

    static std::uint32_t key(const std::vector<double>& obs) {
        double rel_x = (obs[4] - obs[0]) * kPositionScale;
        double rel_y = (obs[5] - obs[1]) * kPositionScale;
        double host_v = obs[3] * kSpeedScale;
        double rel_yaw = std::remainder(obs[6] - obs[2], 2.0); // obs angles are theta / pi
        std::uint32_t k = static_cast<std::uint32_t>(bin(rel_x, -30.0, 30.0, 7));
        k = k * 7 + static_cast<std::uint32_t>(bin(rel_y, -30.0, 30.0, 7));
        k = k * 5 + static_cast<std::uint32_t>(bin(host_v, 0.0, 10.0, 5));
        k = k * 8 + static_cast<std::uint32_t>(bin(rel_yaw, -1.0, 1.0, 8));
        return k;
    }

    std::array<double, kActions> lookup(std::uint32_t k) const {
        auto it = table.find(k);
        return it == table.end() ? std::array<double, kActions>{} : it->second;
    }

    int greedy(std::uint32_t k) const {
        auto q = lookup(k);
        int best = 0;
        for (int a = 1; a < kActions; ++a)
            if (q[static_cast<std::size_t>(a)] > q[static_cast<std::size_t>(best)]) best = a;
        return best;
    }

    int select(std::uint32_t k, double eps, Rng& rng) {
        if (rng.bernoulli(eps)) return rng.uniform_int(kActions);
        return greedy(k);
    }

    void update(std::uint32_t k, int a, double r, std::uint32_t k2, bool done) {
        std::array<double, kActions> next_q = lookup(k2);
        double boot = done ? 0.0 : *std::max_element(next_q.begin(), next_q.end());
        double& cell = table[k][static_cast<std::size_t>(a)];
        cell += alpha * (r + gamma * boot - cell);
    }
};

} // namespace

std::vector<EpisodeLog> run_baseline(const RunConfig& cfg, BaselineAlgo algo,
                                     std::uint64_t seed) {
    cfg.validate();
    DdpgConfig ecfg = cfg.execution;
    ecfg.obs_dim = kObsDim;
    ecfg.action_dim = 1;
    EpsilonSchedule schedule; // fresh decay each phase mirrors per-phase retraining

    std::optional<DdpgAgent> ddpg;
    TabularQ tq;
    Rng rng(derive_seed(seed, 0xBA5E, 1));
    if (algo == BaselineAlgo::flat_ddpg) ddpg.emplace(ecfg, derive_seed(seed, 0xBA5E, 0));
    tq.gamma = ecfg.gamma;

    std::vector<EpisodeLog> logs;
    for (std::size_t phase_idx = 0; phase_idx < cfg.phases.size(); ++phase_idx) {
        const PhaseSpec& phase = cfg.phases[phase_idx];
        const std::string name = phase_kind_name(phase.kind);
        const int budget = scaled_epochs(phase.epochs, cfg.scale);
        IntersectionEnv env(scenario_for_phase(cfg.scenario, phase));
        for (int j = 0; j < budget; ++j) {
            double eps = schedule.value(j, budget);
            std::uint64_t env_seed = episode_seed(seed, phase_idx, j);
            if (algo == BaselineAlgo::flat_ddpg) {
                std::vector<double> obs = env.reset(env_seed);
                DdpgAgent::EpisodeStats st = ddpg->train_episode(env, obs, eps);
                logs.push_back(
                    log_from_stats(name, j, st, present_subtasks(env.world()), seed));
            } else {
                std::vector<double> obs = env.reset(env_seed);
                EpisodeLog e;
                e.phase = name;
                e.epoch = j;
                e.seed = seed;
                StepInfo last;
                bool done = false;
                while (!done) {
                    std::uint32_t k = TabularQ::key(obs);
                    int a = tq.select(k, eps, rng);
                    StepResult r = env.step({TabularQ::kLevels[a]});
                    tq.update(k, a, r.reward, TabularQ::key(r.obs), r.done);
                    e.steps += 1;
                    e.undiscounted_return += r.reward;
                    e.r_vel += r.info.r_vel;
                    e.r_living += r.info.r_living;
                    e.r_col += r.info.r_col;
                    e.r_goal += r.info.r_goal;
                    last = r.info;
                    obs = std::move(r.obs);
                    done = r.done;
                }
                finish_log(e, last, present_subtasks(env.world()));
                logs.push_back(std::move(e));
            }
        }
    }
    return logs;
}

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string svg_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

void write_curves_svg(const fs::path& path,
                      const std::vector<std::pair<std::string, std::vector<double>>>& series) {
    double lo = 0.0, hi = 1.0;
    std::size_t max_len = 2;
    bool first = true;
    for (const auto& [label, ys] : series) {
        (void)label;
        for (double y : ys) {
            if (first) {
                lo = hi = y;
                first = false;
            }
            lo = std::min(lo, y);
            hi = std::max(hi, y);
        }
        max_len = std::max(max_len, ys.size());
    }
    if (hi - lo < 1e-12) hi = lo + 1.0;

    const double width = 800, height = 500, ml = 80, mr = 20, mt = 20, mb = 60;
    auto x_of = [&](std::size_t i) {
        return ml + (width - ml - mr) * static_cast<double>(i) /
                   static_cast<double>(max_len - 1);
    };
    auto y_of = [&](double v) { return mt + (height - mt - mb) * (1.0 - (v - lo) / (hi - lo)); };

    std::ofstream f(path, std::ios::trunc);
    if (!f) throw CorruptionError(path.string() + ": cannot open for writing");
    f << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
      << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
      << height - mb << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
      << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 15
      << "\" text-anchor=\"middle\" font-size=\"16\">episode</text>\n"
      << "<text x=\"20\" y=\"" << (mt + height - mb) / 2
      << "\" text-anchor=\"middle\" font-size=\"16\" transform=\"rotate(-90 20 "
      << (mt + height - mb) / 2 << ")\">return (EMA)</text>\n"
      << "<text x=\"" << ml - 8 << "\" y=\"" << y_of(hi) + 5
      << "\" text-anchor=\"end\" font-size=\"12\">" << svg_num(hi) << "</text>\n"
      << "<text x=\"" << ml - 8 << "\" y=\"" << y_of(lo) + 5
      << "\" text-anchor=\"end\" font-size=\"12\">" << svg_num(lo) << "</text>\n"
      << "<text x=\"" << ml << "\" y=\"" << height - mb + 20
      << "\" text-anchor=\"middle\" font-size=\"12\">0</text>\n"
      << "<text x=\"" << width - mr << "\" y=\"" << height - mb + 20
      << "\" text-anchor=\"middle\" font-size=\"12\">" << max_len - 1 << "</text>\n";
    std::size_t idx = 0;
    for (const auto& [label, ys] : series) {
        const char* color = kPalette[idx % (sizeof kPalette / sizeof kPalette[0])];
        f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < ys.size(); ++i) {
            if (i) f << ' ';
            f << svg_num(x_of(i)) << ',' << svg_num(y_of(ys[i]));
        }
        f << "\"/>\n";
        double ly = mt + 20.0 * static_cast<double>(idx);
        f << "<line x1=\"" << width - mr - 150 << "\" y1=\"" << ly << "\" x2=\""
          << width - mr - 120 << "\" y2=\"" << ly << "\" stroke=\"" << color
          << "\" stroke-width=\"1.5\"/>\n"
          << "<text x=\"" << width - mr - 112 << "\" y=\"" << ly + 4
          << "\" font-size=\"13\">" << label << "</text>\n";
        ++idx;
    }
    f << "</svg>\n";
    if (!f) throw CorruptionError(path.string() + ": write failed");
}

} // namespace

void write_report(const std::vector<std::pair<std::string, std::string>>& runs,
                  const std::string& out_dir, const ReportOptions& opt) {
    if (runs.empty()) throw ContractViolation("write_report: no runs given");
    fs::create_directories(out_dir);

    std::vector<std::pair<std::string, std::vector<double>>> ema_series;
    std::vector<std::pair<std::string, SuccessTable>> tables;
    for (const auto& [label, dir] : runs) {
        fs::path csv = fs::path(dir) / "episodes.csv";
        std::vector<EpisodeLog> logs = read_episode_csv(csv.string());

        std::vector<double> returns;
        returns.reserve(logs.size());
        for (const EpisodeLog& e : logs) returns.push_back(e.undiscounted_return);
        std::vector<double> smooth = ema(returns, opt.ema_weight);

        std::ofstream f(fs::path(out_dir) / (label + "_learning_curve.csv"), std::ios::trunc);
        if (!f)
            throw CorruptionError((fs::path(out_dir) / (label + "_learning_curve.csv")).string() +
                                  ": cannot open for writing");
        f << "epoch,return,ema\n";
        for (std::size_t i = 0; i < returns.size(); ++i)
            f << i << ',' << format_real(returns[i]) << ',' << format_real(smooth[i]) << '\n';

        // Success is scored on the mixed-test episodes, over at most the
        // requested window.
        std::vector<EpisodeLog> test_logs;
        for (const EpisodeLog& e : logs)
            if (e.phase == phase_kind_name(PhaseKind::mixed_test)) test_logs.push_back(e);
        SuccessTable table;
        if (!test_logs.empty())
            table = success_rates(test_logs,
                                  std::min<int>(opt.window, static_cast<int>(test_logs.size())));
        tables.emplace_back(label, table);
        ema_series.emplace_back(label, std::move(smooth));
    }

    std::ofstream f(fs::path(out_dir) / "success_table.csv", std::ios::trunc);
    if (!f)
        throw CorruptionError((fs::path(out_dir) / "success_table.csv").string() +
                              ": cannot open for writing");
    f << "metric";
    for (const auto& [label, table] : tables) {
        (void)table;
        f << ',' << label;
    }
    f << '\n';
    const char* rows[] = {"lane_change", "left_turn_oncoming", "turn_around", "goal"};
    for (int r = 0; r < 4; ++r) {
        f << rows[r];
        for (const auto& [label, table] : tables) {
            (void)label;
            f << ',';
            if (table.window == 0) {
                f << "na";
            } else if (r < 3) {
                const auto& cell = table.subtask[static_cast<std::size_t>(r)];
                f << (cell ? format_real(*cell) : "na");
            } else {
                f << format_real(table.goal_rate);
            }
        }
        f << '\n';
    }
    f.close();

    if (opt.svg) write_curves_svg(fs::path(out_dir) / "curves.svg", ema_series);
}

std::vector<std::pair<std::string, bool>> verify_toys() {
    std::vector<std::pair<std::string, bool>> out;

    // The stored option-level values satisfy their own Bellman recursion
    // under the simulated dynamics, and advancing is everywhere optimal.
    {
        std::vector<double> v = ChainMdp::optimal_values();
        bool ok = v.size() == ChainMdp::kNumStates && v[ChainMdp::kNumStates - 1] == 0.0;
        // The last state is terminal; every earlier state must satisfy the
        // recursion with advancing optimal.
        for (int s = 0; ok && s + 1 < ChainMdp::kNumStates; ++s) {
            double best = -1e300;
            int arg = -1;
            for (int o = 0; o < ChainMdp::kNumOptions; ++o) {
                ChainMdp mdp;
                mdp.reset();
                for (int hop = 0; hop < s; ++hop) mdp.step(1);
                SmdpOutcome res = mdp.step(o);
                double disc = 1.0;
                for (int k = 0; k < res.duration; ++k) disc *= ChainMdp::kGamma;
                double q = res.discounted_reward +
                           (res.terminal ? 0.0
                                         : disc * v[static_cast<std::size_t>(res.next_state)]);
                if (q > best) {
                    best = q;
                    arg = o;
                }
            }
            ok = ok && std::abs(best - v[static_cast<std::size_t>(s)]) < 1e-9 && arg == 1;
        }
        out.emplace_back("chain mdp values satisfy the bellman recursion", ok);
    }

    // Full throttle covers the corridor in the precomputed step count.
    {
        CorridorEnv env;
        env.reset(0);
        int n = 0;
        for (; n < CorridorEnv::kMaxSteps; ) {
            env.step({1.0});
            ++n;
            if (env.position() >= CorridorEnv::kGoalLo) break;
        }
        out.emplace_back("corridor full throttle reaches the goal meter in 56 steps", n == 56);
    }

    // Zero action never reaches the reach band.
    {
        PointReachEnv env;
        env.reset(0);
        bool succeeded = false;
        while (!env.done()) {
            env.step({0.0});
            succeeded = succeeded ||
                        std::abs(env.position() - PointReachEnv::kTarget) <= PointReachEnv::kBand;
        }
        out.emplace_back("point reach never succeeds under zero action", !succeeded);
    }

    return out;
}

} // namespace mpdrive
