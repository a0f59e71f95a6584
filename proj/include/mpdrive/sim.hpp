#pragma once
#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mpdrive/env.hpp"
#include "mpdrive/rng.hpp"

namespace mpdrive {

// Kinematic bicycle pose: heading wrapped to (-pi, pi], speed never negative.
struct VehicleState {
    double x = 0.0, y = 0.0, theta = 0.0, v = 0.0;
};

// Control channels clamp on construction: throttle/brake to [0,1], steer to
// [-1,1] (fraction of maximum steering angle).
struct Action {
    double throttle = 0.0, brake = 0.0, steer = 0.0;

    Action() = default;
    Action(double t, double b, double s);
};

struct KinematicsParams {
    double wheelbase = 2.9;        // m
    double delta_max = 0.6108652381980153; // 35 degrees in radians
    double a_max = 3.0;            // m/s^2 full throttle
    double b_max = 8.0;            // m/s^2 full brake
    double c_drag = 0.05;          // 1/s, linear speed decay
};

// Waypoint polyline a pure-pursuit controller follows.
struct Path {
    std::vector<std::array<double, 2>> waypoints;
    void validate() const; // at least two distinct waypoints
    double length() const;
    // Point at the given arc length from the start, clamped to the ends.
    std::array<double, 2> point_at(double arc) const;
    double heading_at(double arc) const;
};

enum class Subtask { lane_change = 0, left_turn_oncoming = 1, turn_around = 2 };
inline constexpr int kNumSubtasks = 3;
const char* subtask_name(Subtask s);

struct ScenarioConfig {
    double lane_width = 3.5;   // m
    double arm_length = 50.0;  // m from the intersection box edge
    double vehicle_length = 4.5;
    double vehicle_width = 2.0;
    std::array<bool, kNumSubtasks> subtasks{false, false, false};
    // Probability that an enabled subtask's vehicle appears at all.
    std::array<double, kNumSubtasks> presence_probability{1.0, 1.0, 1.0};
    double move_probability = 0.5; // appearing vehicle drives vs stays parked
    double speed_lo = 2.0, speed_hi = 6.0; // other-vehicle target speed range
    double start_offset_max = 6.0;         // m of arc-length spawn jitter
    double dt = 0.05;        // s
    int max_steps = 1000;
    double goal_x = -20.0, goal_y = 1.75, goal_radius = 3.0;
    double v_goal = 5.0;     // m/s, rewarded cruise speed
    KinematicsParams host_kinematics{};
    // Scripted vehicles get a wider steering envelope so tight scripted
    // turns stay kinematically trackable.
    KinematicsParams other_kinematics{2.9, 1.2217304763960306, 3.0, 8.0, 0.05};

    void validate() const;
};

struct PurePursuitState {
    std::size_t nearest_index = 0; // monotone progress cursor
    bool complete = false;
};

struct PidState {
    double integral = 0.0;
    double prev_error = 0.0;
    bool has_prev = false;
};

struct PidGains {
    double kp = 0.6, ki = 0.25, kd = 0.0;
    double integral_limit = 4.0;
};

struct OtherVehicle {
    VehicleState state;
    Path path;
    double target_speed = 0.0;
    bool moving = false;
    bool active = true; // false once it leaves the map
    Subtask subtask = Subtask::lane_change;
    PurePursuitState pursuit;
    PidState pid;
};

struct WorldState {
    ScenarioConfig config;
    VehicleState host;
    Path host_route;
    PurePursuitState host_pursuit;
    std::vector<OtherVehicle> others;
    int step = 0;
    bool finished = false;
    bool collision = false;
    bool goal = false;
    std::array<bool, kNumSubtasks> zone_passed{};
    Rng rng{0};
};

// --- kinematics and control -------------------------------------------------

// Forward-Euler step: position and heading advance with the current speed,
// then speed updates (throttle/brake/drag) and clamps at zero.
VehicleState integrate(const VehicleState& s, const Action& a, double dt,
                       const KinematicsParams& k = {});

// Raw pure-pursuit steering angle (radians) toward the lookahead point.
double pursuit_delta(const VehicleState& s, const Path& path, double lookahead,
                     PurePursuitState& ctrl, double wheelbase);

// Normalized steer command in [-1, 1]; 0 once the path is complete.
double pure_pursuit(const VehicleState& s, const Path& path, double lookahead,
                    PurePursuitState& ctrl, const KinematicsParams& k = {});

// PI(D) speed tracking split into throttle/brake, both in [0, 1], never both
// positive.
std::pair<double, double> pid_speed(double v, double v_ref, PidState& ctrl, double dt,
                                    const PidGains& gains = {});

// --- scenario ----------------------------------------------------------------

// Host route through the intersection: south approach, left turn, west exit.
Path host_route(const ScenarioConfig& c);
VehicleState host_start(const ScenarioConfig& c);

WorldState spawn_scenario(const ScenarioConfig& c, std::uint64_t seed);

// Which subtask vehicles were placed in this world.
std::array<bool, kNumSubtasks> present_subtasks(const WorldState& w);

// Observation: host (x, y, theta, v) then nearest active other vehicle,
// positions / 60, angles / pi, speeds / 10. With no active other vehicle the
// slot holds a sentinel placed 60 m ahead of the host at zero speed.
inline constexpr int kObsDim = 8;
inline constexpr double kPositionScale = 60.0;
inline constexpr double kSpeedScale = 10.0;
inline constexpr double kSentinelDistance = 60.0;
std::vector<double> observe(const WorldState& w);

// Oriented-rectangle overlap via the separating-axis test.
bool check_collision(const VehicleState& a, double len_a, double wid_a,
                     const VehicleState& b, double len_b, double wid_b);

struct RewardParts {
    double r_vel = 0.0, r_living = 0.0, r_col = 0.0, r_goal = 0.0;
    double total() const { return r_vel + r_living + r_col + r_goal; }
};

// Reward of arriving in `next` with the given event flags: speed shaping
// peaked at 5 m/s, constant living penalty, collision and goal terms.
RewardParts reward_parts(const VehicleState& next, bool collision, bool goal);

// Advances the world one tick. The host's steer channel is overridden by
// pure pursuit along the host route; throttle/brake come from the action.
// Stepping a finished episode throws ContractViolation.
StepResult step_env(WorldState& w, const Action& host_action);

// --- trajectory log ----------------------------------------------------------

// Streams one CSV row per step: step, time, host pose, nearest other pose,
// action, reward, done. Numbers carry 9 significant digits.
class TrajectoryWriter {
public:
    explicit TrajectoryWriter(const std::string& path);
    ~TrajectoryWriter();
    void record(const WorldState& w, const Action& a, double reward, bool done);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// --- Env adapter ---------------------------------------------------------------

// Single longitudinal action channel u in [-1, 1]: positive u throttles,
// negative u brakes, steering always comes from pure pursuit.
class IntersectionEnv : public Env {
public:
    explicit IntersectionEnv(const ScenarioConfig& c);

    int obs_dim() const override { return kObsDim; }
    int action_dim() const override { return 1; }
    std::pair<double, double> action_bounds(int) const override { return {-1.0, 1.0}; }

    std::vector<double> reset(std::uint64_t seed) override;
    std::vector<double> reset_randomized(std::uint64_t seed) override;
    std::vector<double> canonical_start_obs() override;
    StepResult step(const std::vector<double>& action) override;
    bool done() const override { return world_.finished; }

    const WorldState& world() const { return world_; }
    WorldState& world() { return world_; }

    static Action to_action(double u);

private:
    ScenarioConfig config_;
    WorldState world_;
    bool started_ = false;
};

} // namespace mpdrive
