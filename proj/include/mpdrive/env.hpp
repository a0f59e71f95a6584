#pragma once
#include <array>
#include <cstdint>
#include <utility>
#include <vector>

namespace mpdrive {

// Per-step event flags. Drive scenarios fill all fields; toy tasks leave the
// zone flags at false.
struct StepInfo {
    bool collision = false;
    bool goal = false;
    bool timeout = false;
    std::array<bool, 3> zone_passed{}; // lane change, left turn, turn around
    double r_vel = 0.0, r_living = 0.0, r_col = 0.0, r_goal = 0.0;
};

struct StepResult {
    std::vector<double> obs;
    double reward = 0.0;
    bool done = false;
    StepInfo info;
};

// Episodic environment with a continuous action vector. Stepping a finished
// episode is a contract violation; callers reset first.
class Env {
public:
    virtual ~Env() = default;

    virtual int obs_dim() const = 0;
    virtual int action_dim() const = 0;
    virtual std::pair<double, double> action_bounds(int i) const = 0;

    // Starts an episode from the task's start state. Randomness (scenario
    // sampling) is fully determined by the seed.
    virtual std::vector<double> reset(std::uint64_t seed) = 0;

    // Starts an episode from a randomized start state, used by skill
    // discovery for state-space coverage. Defaults to the canonical reset.
    virtual std::vector<double> reset_randomized(std::uint64_t seed) { return reset(seed); }

    // Deterministic representative of the start state, for novelty queries.
    virtual std::vector<double> canonical_start_obs() = 0;

    virtual StepResult step(const std::vector<double>& action) = 0;

    virtual bool done() const = 0;

    std::vector<std::pair<double, double>> all_action_bounds() const {
        std::vector<std::pair<double, double>> b;
        for (int i = 0; i < action_dim(); ++i) b.push_back(action_bounds(i));
        return b;
    }
};

} // namespace mpdrive
