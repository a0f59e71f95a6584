#pragma once
#include <cstdint>
#include <utility>
#include <vector>

#include "mpdrive/env.hpp"

namespace mpdrive {

// One-dimensional corridor with inertial dynamics. Position advances with
// the current velocity before the velocity integrates the commanded
// acceleration; the goal region is the final meter.
class CorridorEnv : public Env {
public:
    static constexpr double kDt = 0.1;
    static constexpr double kLength = 10.0;
    static constexpr double kVmax = 2.0;
    static constexpr double kAccel = 1.0;
    static constexpr double kGoalLo = 9.0;
    static constexpr int kMaxSteps = 200;

    int obs_dim() const override { return 2; }
    int action_dim() const override { return 1; }
    std::pair<double, double> action_bounds(int) const override { return {-1.0, 1.0}; }

    std::vector<double> reset(std::uint64_t seed) override;
    std::vector<double> reset_randomized(std::uint64_t seed) override; // p ~ U[0, 8.8]
    std::vector<double> canonical_start_obs() override;
    StepResult step(const std::vector<double>& action) override;
    bool done() const override { return finished_; }

    // Direct state placement for replaying recorded starts.
    void set_state(double position, double velocity);
    double position() const { return p_; }
    double velocity() const { return v_; }
    std::vector<double> observation() const;

private:
    double p_ = 0.0, v_ = 0.0;
    int step_count_ = 0;
    bool finished_ = false;
    bool started_ = false;
};

// Scalar servo task: drive x to the band around 0.5.
class PointReachEnv : public Env {
public:
    static constexpr double kStep = 0.1;
    static constexpr double kTarget = 0.5;
    static constexpr double kBand = 0.05;
    static constexpr int kMaxSteps = 100;

    int obs_dim() const override { return 1; }
    int action_dim() const override { return 1; }
    std::pair<double, double> action_bounds(int) const override { return {-1.0, 1.0}; }

    std::vector<double> reset(std::uint64_t seed) override;
    std::vector<double> reset_randomized(std::uint64_t seed) override; // x ~ U[0, 1]
    std::vector<double> canonical_start_obs() override;
    StepResult step(const std::vector<double>& action) override;
    bool done() const override { return finished_; }

    void set_state(double x);
    double position() const { return x_; }

private:
    double x_ = 0.0;
    int step_count_ = 0;
    bool finished_ = false;
    bool started_ = false;
};

// Outcome of executing one temporally extended option.
struct SmdpOutcome {
    int next_state = 0;
    double discounted_reward = 0.0; // sum of gamma^k r_k inside the option
    int duration = 0;
    bool terminal = false;
};

// Five-state corridor of options: advancing is optimal in every state, while
// dawdling pays a small per-step reward and wastes discounted time.
class ChainMdp {
public:
    static constexpr int kNumStates = 5;
    static constexpr int kNumOptions = 2; // 0 = dawdle, 1 = advance
    static constexpr double kGamma = 0.9;
    static constexpr double kDawdleReward = 0.2;
    static constexpr int kDawdleSteps = 2;
    static constexpr double kTerminalReward = 10.0;

    int reset() {
        state_ = 0;
        terminal_ = false;
        return state_;
    }
    int state() const { return state_; }
    bool terminal() const { return terminal_; }
    SmdpOutcome step(int option);

    static std::vector<double> encode(int state); // one-hot
    // Value-iteration oracle over the option-level dynamics.
    static std::vector<double> optimal_values();

private:
    int state_ = 0;
    bool terminal_ = false;
};

} // namespace mpdrive
