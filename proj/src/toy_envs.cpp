#include "mpdrive/toy_envs.hpp"

#include <algorithm>
#include <cmath>

#include "mpdrive/errors.hpp"
#include "mpdrive/rng.hpp"

namespace mpdrive {

std::vector<double> CorridorEnv::observation() const {
    return {p_ / kLength, v_ / kVmax};
}

std::vector<double> CorridorEnv::reset(std::uint64_t) {
    p_ = 0.0;
    v_ = 0.0;
    step_count_ = 0;
    finished_ = false;
    started_ = true;
    return observation();
}

std::vector<double> CorridorEnv::reset_randomized(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 3, 0));
    reset(seed);
    p_ = rng.uniform(0.0, 8.8);
    v_ = rng.uniform(-1.0, 1.0);
    return observation();
}

std::vector<double> CorridorEnv::canonical_start_obs() {
    return {0.0, 0.0};
}

void CorridorEnv::set_state(double position, double velocity) {
    p_ = std::clamp(position, 0.0, kLength);
    v_ = std::clamp(velocity, -kVmax, kVmax);
    step_count_ = 0;
    finished_ = false;
    started_ = true;
}

StepResult CorridorEnv::step(const std::vector<double>& action) {
    if (!started_) throw ContractViolation("reset the environment before stepping");
    if (finished_) throw ContractViolation("step on finished episode");
    if (action.size() != 1) throw ContractViolation("corridor action has one component");
    double u = std::clamp(action[0], -1.0, 1.0);
    p_ = std::clamp(p_ + v_ * kDt, 0.0, kLength);
    v_ = std::clamp(v_ + kDt * kAccel * u, -kVmax, kVmax);
    step_count_ += 1;
    bool goal = p_ >= kGoalLo;
    bool timeout = step_count_ >= kMaxSteps && !goal;
    finished_ = goal || timeout;
    StepInfo info;
    info.goal = goal;
    info.timeout = timeout;
    info.r_living = -0.1;
    info.r_goal = goal ? 10.0 : 0.0;
    return {observation(), info.r_living + info.r_goal, finished_, info};
}

std::vector<double> PointReachEnv::reset(std::uint64_t) {
    x_ = 0.0;
    step_count_ = 0;
    finished_ = false;
    started_ = true;
    return {x_};
}

std::vector<double> PointReachEnv::reset_randomized(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 4, 0));
    reset(seed);
    x_ = rng.uniform(0.0, 1.0);
    return {x_};
}

std::vector<double> PointReachEnv::canonical_start_obs() {
    return {0.0};
}

void PointReachEnv::set_state(double x) {
    x_ = x;
    step_count_ = 0;
    finished_ = false;
    started_ = true;
}

StepResult PointReachEnv::step(const std::vector<double>& action) {
    if (!started_) throw ContractViolation("reset the environment before stepping");
    if (finished_) throw ContractViolation("step on finished episode");
    if (action.size() != 1) throw ContractViolation("point-reach action has one component");
    double u = std::clamp(action[0], -1.0, 1.0);
    x_ += kStep * u;
    step_count_ += 1;
    bool goal = std::abs(x_ - kTarget) <= kBand;
    bool timeout = step_count_ >= kMaxSteps && !goal;
    finished_ = goal || timeout;
    StepInfo info;
    info.goal = goal;
    info.timeout = timeout;
    info.r_living = -0.1;
    info.r_goal = goal ? 10.0 : 0.0;
    return {{x_}, info.r_living + info.r_goal, finished_, info};
}

SmdpOutcome ChainMdp::step(int option) {
    if (terminal_) throw ContractViolation("step on finished episode");
    if (option != 0 && option != 1) throw ContractViolation("chain mdp has two options");
    SmdpOutcome out;
    if (option == 0) {
        double r = 0.0, g = 1.0;
        for (int k = 0; k < kDawdleSteps; ++k) {
            r += g * kDawdleReward;
            g *= kGamma;
        }
        out.discounted_reward = r;
        out.duration = kDawdleSteps;
        out.next_state = state_;
    } else {
        out.duration = 1;
        out.next_state = state_ + 1;
        if (out.next_state == kNumStates - 1) {
            out.discounted_reward = kTerminalReward;
            out.terminal = true;
            terminal_ = true;
        }
        state_ = out.next_state;
    }
    return out;
}

std::vector<double> ChainMdp::encode(int state) {
    if (state < 0 || state >= kNumStates) throw ContractViolation("state outside the chain");
    std::vector<double> obs(kNumStates, 0.0);
    obs[static_cast<std::size_t>(state)] = 1.0;
    return obs;
}

std::vector<double> ChainMdp::optimal_values() {
    std::vector<double> v(kNumStates, 0.0);
    for (int sweep = 0; sweep < 200; ++sweep) {
        for (int s = kNumStates - 2; s >= 0; --s) {
            double dawdle = 0.0, g = 1.0;
            for (int k = 0; k < kDawdleSteps; ++k) {
                dawdle += g * kDawdleReward;
                g *= kGamma;
            }
            dawdle += g * v[static_cast<std::size_t>(s)];
            bool terminal = s + 1 == kNumStates - 1;
            double advance = terminal ? kTerminalReward
                                      : kGamma * v[static_cast<std::size_t>(s + 1)];
            v[static_cast<std::size_t>(s)] = std::max(dawdle, advance);
        }
    }
    return v;
}

} // namespace mpdrive
