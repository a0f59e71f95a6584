#include "mpdrive/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <utility>

#include "mpdrive/errors.hpp"

namespace mpdrive {

namespace {

constexpr double kPi = std::numbers::pi;

// Wraps to (-pi, pi]; -pi maps to +pi.
double wrap_angle(double a) {
    a = std::fmod(a + kPi, 2.0 * kPi);
    if (a <= 0.0) a += 2.0 * kPi;
    return a - kPi;
}

// Host lookahead grows with speed; scripted vehicles use a short fixed
// horizon so the turn-around semicircle stays trackable.
constexpr double kLookaheadBase = 3.0;
constexpr double kLookaheadGain = 0.25;
constexpr double kOtherLookahead = 2.0;
constexpr double kMapLimit = 55.0;
constexpr double kMergeZoneExitY = -10.0;
constexpr double kHostStartY = -40.0;

struct Projection {
    double arc = 0.0;
    std::size_t segment = 0;
    double dist2 = std::numeric_limits<double>::infinity();
};

// Closest point on the polyline, searching only segments at or after
// `from_segment` so progress never jumps backward across nearby legs.
Projection project_progress(const Path& p, double x, double y, std::size_t from_segment) {
    Projection best;
    double arc_base = 0.0;
    const auto& w = p.waypoints;
    for (std::size_t i = 0; i + 1 < w.size(); ++i) {
        double ax = w[i][0], ay = w[i][1];
        double dx = w[i + 1][0] - ax, dy = w[i + 1][1] - ay;
        double len = std::hypot(dx, dy);
        if (i >= from_segment) {
            double t = ((x - ax) * dx + (y - ay) * dy) / (dx * dx + dy * dy);
            t = std::clamp(t, 0.0, 1.0);
            double px = ax + t * dx, py = ay + t * dy;
            double d2 = (x - px) * (x - px) + (y - py) * (y - py);
            if (d2 < best.dist2) {
                best.dist2 = d2;
                best.arc = arc_base + t * len;
                best.segment = i;
            }
        }
        arc_base += len;
    }
    return best;
}

std::array<std::array<double, 2>, 4> rect_corners(const VehicleState& s, double len, double wid) {
    double ux = std::cos(s.theta), uy = std::sin(s.theta);
    double hl = 0.5 * len, hw = 0.5 * wid;
    return {{{s.x + hl * ux - hw * uy, s.y + hl * uy + hw * ux},
             {s.x + hl * ux + hw * uy, s.y + hl * uy - hw * ux},
             {s.x - hl * ux + hw * uy, s.y - hl * uy - hw * ux},
             {s.x - hl * ux - hw * uy, s.y - hl * uy + hw * ux}}};
}

bool separated_on_axis(double axx, double axy, const std::array<std::array<double, 2>, 4>& a,
                       const std::array<std::array<double, 2>, 4>& b) {
    double alo = std::numeric_limits<double>::infinity(), ahi = -alo;
    double blo = alo, bhi = ahi;
    for (const auto& c : a) {
        double p = c[0] * axx + c[1] * axy;
        alo = std::min(alo, p);
        ahi = std::max(ahi, p);
    }
    for (const auto& c : b) {
        double p = c[0] * axx + c[1] * axy;
        blo = std::min(blo, p);
        bhi = std::max(bhi, p);
    }
    return ahi < blo || bhi < alo;
}

// Scripted route of a subtask vehicle. Coordinates assume the default
// intersection footprint; lane offsets scale with the configured width.
Path subtask_path(const ScenarioConfig& c, Subtask s) {
    double lc = 0.5 * c.lane_width; // lane-center offset from the road axis
    double reach = c.lane_width + c.arm_length; // pavement extent from origin
    Path p;
    switch (s) {
    case Subtask::lane_change:
        // Starts in the opposing lane south of the box, merges into the
        // host's lane ahead of it, continues north.
        p.waypoints = {{-lc, -34.0}, {-lc, -20.0}, {lc, -10.0}, {lc, 31.0}};
        break;
    case Subtask::left_turn_oncoming:
        // Oncoming traffic crossing the intersection while the host turns.
        p.waypoints = {{-lc, 40.0}, {-lc, -(reach - 5.5)}};
        break;
    case Subtask::turn_around: {
        // Southbound, U-turn inside the box, back north in the host's lane.
        p.waypoints = {{-lc, 20.0}, {-lc, 0.5}};
        for (int i = 1; i <= 16; ++i) {
            double phi = kPi + kPi * i / 16.0;
            p.waypoints.push_back({lc * std::cos(phi), 0.5 + lc * std::sin(phi)});
        }
        p.waypoints.push_back({lc, 40.0});
        break;
    }
    }
    return p;
}

// Arc-length window for randomized host placement: from the canonical start
// to just short of the goal disk.
std::pair<double, double> random_start_arcs(const ScenarioConfig& c, const Path& route) {
    double box = c.lane_width;
    double r = box + 0.5 * c.lane_width;
    double lo = (box + c.arm_length) + kHostStartY;
    double hi = c.arm_length + (kPi / 2.0) * r + (std::abs(c.goal_x) - box - c.goal_radius) - 1.5;
    hi = std::min(hi, route.length() - 1.0);
    lo = std::clamp(lo, 0.0, hi);
    return {lo, hi};
}

} // namespace

Action::Action(double t, double b, double s)
    : throttle(std::clamp(t, 0.0, 1.0)),
      brake(std::clamp(b, 0.0, 1.0)),
      steer(std::clamp(s, -1.0, 1.0)) {}

void Path::validate() const {
    if (waypoints.size() < 2) throw ContractViolation("path needs at least two waypoints");
    for (std::size_t i = 0; i + 1 < waypoints.size(); ++i) {
        double dx = waypoints[i + 1][0] - waypoints[i][0];
        double dy = waypoints[i + 1][1] - waypoints[i][1];
        if (std::hypot(dx, dy) <= 1e-9)
            throw ContractViolation("path has duplicate consecutive waypoints");
    }
}

double Path::length() const {
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < waypoints.size(); ++i)
        total += std::hypot(waypoints[i + 1][0] - waypoints[i][0],
                            waypoints[i + 1][1] - waypoints[i][1]);
    return total;
}

std::array<double, 2> Path::point_at(double arc) const {
    validate();
    if (arc <= 0.0) return waypoints.front();
    for (std::size_t i = 0; i + 1 < waypoints.size(); ++i) {
        double dx = waypoints[i + 1][0] - waypoints[i][0];
        double dy = waypoints[i + 1][1] - waypoints[i][1];
        double len = std::hypot(dx, dy);
        if (arc <= len) {
            double t = arc / len;
            return {waypoints[i][0] + t * dx, waypoints[i][1] + t * dy};
        }
        arc -= len;
    }
    return waypoints.back();
}

double Path::heading_at(double arc) const {
    validate();
    arc = std::max(arc, 0.0);
    for (std::size_t i = 0; i + 1 < waypoints.size(); ++i) {
        double dx = waypoints[i + 1][0] - waypoints[i][0];
        double dy = waypoints[i + 1][1] - waypoints[i][1];
        double len = std::hypot(dx, dy);
        if (arc <= len || i + 2 == waypoints.size()) return std::atan2(dy, dx);
        arc -= len;
    }
    return 0.0;
}

const char* subtask_name(Subtask s) {
    switch (s) {
    case Subtask::lane_change: return "lane_change";
    case Subtask::left_turn_oncoming: return "left_turn";
    case Subtask::turn_around: return "turn_around";
    }
    return "unknown";
}

void ScenarioConfig::validate() const {
    if (lane_width <= 0.0 || arm_length <= 0.0) throw ContractViolation("bad road geometry");
    if (vehicle_length <= 0.0 || vehicle_width <= 0.0) throw ContractViolation("bad vehicle size");
    if (dt <= 0.0) throw ContractViolation("dt must be positive");
    if (max_steps <= 0) throw ContractViolation("max_steps must be positive");
    if (move_probability < 0.0 || move_probability > 1.0)
        throw ContractViolation("move_probability outside [0,1]");
    for (double p : presence_probability)
        if (p < 0.0 || p > 1.0) throw ContractViolation("presence probability outside [0,1]");
    if (speed_lo < 0.0 || speed_hi < speed_lo) throw ContractViolation("bad speed range");
    if (start_offset_max < 0.0) throw ContractViolation("bad start offset");
    if (goal_radius <= 0.0) throw ContractViolation("goal_radius must be positive");
    if (v_goal <= 0.0) throw ContractViolation("v_goal must be positive");
}

VehicleState integrate(const VehicleState& s, const Action& a, double dt,
                       const KinematicsParams& k) {
    if (dt <= 0.0) throw ContractViolation("integrate needs dt > 0");
    VehicleState n;
    n.x = s.x + dt * s.v * std::cos(s.theta);
    n.y = s.y + dt * s.v * std::sin(s.theta);
    n.theta = wrap_angle(s.theta + dt * s.v / k.wheelbase * std::tan(k.delta_max * a.steer));
    double accel = k.a_max * a.throttle - k.b_max * a.brake - k.c_drag * s.v;
    n.v = std::max(0.0, s.v + dt * accel);
    return n;
}

double pursuit_delta(const VehicleState& s, const Path& path, double lookahead,
                     PurePursuitState& ctrl, double wheelbase) {
    path.validate();
    if (lookahead <= 0.0 || wheelbase <= 0.0)
        throw ContractViolation("pursuit needs positive lookahead and wheelbase");
    Projection pr = project_progress(path, s.x, s.y, ctrl.nearest_index);
    ctrl.nearest_index = pr.segment;
    if (pr.arc >= path.length() - 1e-9) ctrl.complete = true;
    if (ctrl.complete) return 0.0;
    auto tgt = path.point_at(pr.arc + lookahead);
    double dx = tgt[0] - s.x, dy = tgt[1] - s.y;
    double ld = std::max(std::hypot(dx, dy), 1e-6);
    double alpha = wrap_angle(std::atan2(dy, dx) - s.theta);
    return std::atan(2.0 * wheelbase * std::sin(alpha) / ld);
}

double pure_pursuit(const VehicleState& s, const Path& path, double lookahead,
                    PurePursuitState& ctrl, const KinematicsParams& k) {
    double delta = pursuit_delta(s, path, lookahead, ctrl, k.wheelbase);
    if (ctrl.complete) return 0.0;
    return std::clamp(delta / k.delta_max, -1.0, 1.0);
}

std::pair<double, double> pid_speed(double v, double v_ref, PidState& ctrl, double dt,
                                    const PidGains& gains) {
    if (dt <= 0.0) throw ContractViolation("pid_speed needs dt > 0");
    double e = v_ref - v;
    double deriv = ctrl.has_prev ? (e - ctrl.prev_error) / dt : 0.0;
    ctrl.integral = std::clamp(ctrl.integral + e * dt, -gains.integral_limit, gains.integral_limit);
    ctrl.prev_error = e;
    ctrl.has_prev = true;
    double u = gains.kp * e + gains.ki * ctrl.integral + gains.kd * deriv;
    if (u >= 0.0) return {std::min(u, 1.0), 0.0};
    return {0.0, std::min(-u, 1.0)};
}

Path host_route(const ScenarioConfig& c) {
    double lc = 0.5 * c.lane_width;
    double box = c.lane_width;
    double reach = box + c.arm_length;
    double r = box + lc; // turn radius onto the westbound lane center
    Path p;
    p.waypoints.push_back({lc, -reach});
    p.waypoints.push_back({lc, -box});
    for (int i = 1; i <= 16; ++i) {
        double phi = (kPi / 2.0) * i / 16.0;
        p.waypoints.push_back({-box + r * std::cos(phi), -box + r * std::sin(phi)});
    }
    p.waypoints.push_back({-reach, lc});
    return p;
}

VehicleState host_start(const ScenarioConfig& c) {
    return {0.5 * c.lane_width, kHostStartY, kPi / 2.0, 0.0};
}

WorldState spawn_scenario(const ScenarioConfig& c, std::uint64_t seed) {
    c.validate();
    WorldState w;
    w.config = c;
    w.host = host_start(c);
    w.host_route = host_route(c);
    w.rng = Rng(derive_seed(seed, 1, 0));
    for (int i = 0; i < kNumSubtasks; ++i) {
        if (!c.subtasks[static_cast<std::size_t>(i)]) continue;
        if (!w.rng.bernoulli(c.presence_probability[static_cast<std::size_t>(i)])) continue;
        OtherVehicle ov;
        ov.subtask = static_cast<Subtask>(i);
        ov.path = subtask_path(c, ov.subtask);
        ov.moving = w.rng.bernoulli(c.move_probability);
        double off = w.rng.uniform(0.0, c.start_offset_max);
        ov.target_speed = w.rng.uniform(c.speed_lo, c.speed_hi);
        auto pt = ov.path.point_at(off);
        ov.state = {pt[0], pt[1], ov.path.heading_at(off), 0.0};
        w.others.push_back(std::move(ov));
    }
    return w;
}

std::array<bool, kNumSubtasks> present_subtasks(const WorldState& w) {
    std::array<bool, kNumSubtasks> out{};
    for (const auto& o : w.others) out[static_cast<std::size_t>(o.subtask)] = true;
    return out;
}

std::vector<double> observe(const WorldState& w) {
    std::vector<double> o(kObsDim);
    o[0] = w.host.x / kPositionScale;
    o[1] = w.host.y / kPositionScale;
    o[2] = w.host.theta / kPi;
    o[3] = w.host.v / kSpeedScale;
    const OtherVehicle* best = nullptr;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (const auto& ov : w.others) {
        if (!ov.active) continue;
        double dx = ov.state.x - w.host.x, dy = ov.state.y - w.host.y;
        double d2 = dx * dx + dy * dy;
        if (d2 < best_d2) {
            best_d2 = d2;
            best = &ov;
        }
    }
    if (best != nullptr) {
        o[4] = best->state.x / kPositionScale;
        o[5] = best->state.y / kPositionScale;
        o[6] = best->state.theta / kPi;
        o[7] = best->state.v / kSpeedScale;
    } else {
        o[4] = (w.host.x + kSentinelDistance * std::cos(w.host.theta)) / kPositionScale;
        o[5] = (w.host.y + kSentinelDistance * std::sin(w.host.theta)) / kPositionScale;
        o[6] = w.host.theta / kPi;
        o[7] = 0.0;
    }
    return o;
}

bool check_collision(const VehicleState& a, double len_a, double wid_a,
                     const VehicleState& b, double len_b, double wid_b) {
    auto ca = rect_corners(a, len_a, wid_a);
    auto cb = rect_corners(b, len_b, wid_b);
    const std::array<std::array<double, 2>, 4> axes = {
        {{std::cos(a.theta), std::sin(a.theta)},
         {-std::sin(a.theta), std::cos(a.theta)},
         {std::cos(b.theta), std::sin(b.theta)},
         {-std::sin(b.theta), std::cos(b.theta)}}};
    for (const auto& ax : axes)
        if (separated_on_axis(ax[0], ax[1], ca, cb)) return false;
    return true;
}

RewardParts reward_parts(const VehicleState& next, bool collision, bool goal) {
    RewardParts r;
    r.r_vel = next.v <= 5.0 ? 0.25 * next.v : 0.25 * (10.0 - next.v);
    r.r_living = -0.5;
    if (collision) r.r_col = -100.0;
    if (goal) r.r_goal = 10.0;
    return r;
}

StepResult step_env(WorldState& w, const Action& host_action) {
    if (w.finished) throw ContractViolation("step on finished episode");
    const ScenarioConfig& c = w.config;
    double look = kLookaheadBase + kLookaheadGain * w.host.v;
    double steer = pure_pursuit(w.host, w.host_route, look, w.host_pursuit, c.host_kinematics);
    Action a(host_action.throttle, host_action.brake, steer);
    w.host = integrate(w.host, a, c.dt, c.host_kinematics);
    for (auto& ov : w.others) {
        if (!ov.active || !ov.moving) continue;
        double os = pure_pursuit(ov.state, ov.path, kOtherLookahead, ov.pursuit, c.other_kinematics);
        auto [thr, brk] = pid_speed(ov.state.v, ov.target_speed, ov.pid, c.dt);
        ov.state = integrate(ov.state, Action(thr, brk, os), c.dt, c.other_kinematics);
        if (ov.pursuit.complete || std::abs(ov.state.x) > kMapLimit ||
            std::abs(ov.state.y) > kMapLimit)
            ov.active = false;
    }
    w.step += 1;
    if (w.host.y > kMergeZoneExitY) w.zone_passed[0] = true;
    if (w.host.x <= -c.lane_width) {
        w.zone_passed[1] = true;
        w.zone_passed[2] = true;
    }
    bool collision = false;
    for (const auto& ov : w.others) {
        if (!ov.active) continue;
        if (check_collision(w.host, c.vehicle_length, c.vehicle_width, ov.state,
                            c.vehicle_length, c.vehicle_width)) {
            collision = true;
            break;
        }
    }
    bool goal = std::hypot(w.host.x - c.goal_x, w.host.y - c.goal_y) <= c.goal_radius;
    bool timeout = w.step >= c.max_steps && !collision && !goal;
    w.collision = w.collision || collision;
    w.goal = w.goal || goal;
    if (collision || goal || timeout) w.finished = true;
    RewardParts parts = reward_parts(w.host, collision, goal);
    StepInfo info;
    info.collision = collision;
    info.goal = goal;
    info.timeout = timeout;
    info.zone_passed = w.zone_passed;
    info.r_vel = parts.r_vel;
    info.r_living = parts.r_living;
    info.r_col = parts.r_col;
    info.r_goal = parts.r_goal;
    return {observe(w), parts.total(), w.finished, info};
}

struct TrajectoryWriter::Impl {
    std::ofstream out;
};

namespace {
void append_g9(std::string& line, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    line += buf;
}
} // namespace

TrajectoryWriter::TrajectoryWriter(const std::string& path) : impl_(new Impl) {
    impl_->out.open(path, std::ios::trunc);
    if (!impl_->out) throw CorruptionError("cannot open trajectory file: " + path);
    impl_->out << "step,t,host_x,host_y,host_theta,host_v,"
                  "other_x,other_y,other_theta,other_v,"
                  "throttle,brake,steer,reward,done\n";
}

TrajectoryWriter::~TrajectoryWriter() = default;

void TrajectoryWriter::record(const WorldState& w, const Action& a, double reward, bool done) {
    std::vector<double> obs = observe(w);
    std::string line = std::to_string(w.step);
    line += ',';
    append_g9(line, w.step * w.config.dt);
    const double raw[8] = {w.host.x, w.host.y, w.host.theta, w.host.v,
                           obs[4] * kPositionScale, obs[5] * kPositionScale,
                           obs[6] * kPi, obs[7] * kSpeedScale};
    for (double v : raw) {
        line += ',';
        append_g9(line, v);
    }
    for (double v : {a.throttle, a.brake, a.steer}) {
        line += ',';
        append_g9(line, v);
    }
    line += ',';
    append_g9(line, reward);
    line += ',';
    line += done ? '1' : '0';
    line += '\n';
    impl_->out << line;
    if (!impl_->out) throw CorruptionError("trajectory write failed");
}

IntersectionEnv::IntersectionEnv(const ScenarioConfig& c) : config_(c) {
    config_.validate();
}

std::vector<double> IntersectionEnv::reset(std::uint64_t seed) {
    world_ = spawn_scenario(config_, seed);
    started_ = true;
    return observe(world_);
}

std::vector<double> IntersectionEnv::reset_randomized(std::uint64_t seed) {
    world_ = spawn_scenario(config_, seed);
    auto [lo, hi] = random_start_arcs(config_, world_.host_route);
    double arc = world_.rng.uniform(lo, hi);
    auto pt = world_.host_route.point_at(arc);
    world_.host.x = pt[0];
    world_.host.y = pt[1];
    world_.host.theta = world_.host_route.heading_at(arc);
    world_.host.v = world_.rng.uniform(0.0, 6.0);
    world_.host_pursuit = {};
    started_ = true;
    return observe(world_);
}

std::vector<double> IntersectionEnv::canonical_start_obs() {
    // Representative start for novelty probes: configured subtasks are forced
    // present so the probe carries the scene features that tell scenarios
    // apart, with all spawn jitter pinned to the seed-zero draw.
    ScenarioConfig probe = config_;
    probe.presence_probability = {1.0, 1.0, 1.0};
    WorldState w = spawn_scenario(probe, 0);
    return observe(w);
}

StepResult IntersectionEnv::step(const std::vector<double>& action) {
    if (!started_) throw ContractViolation("reset the environment before stepping");
    if (action.size() != 1) throw ContractViolation("intersection action has one component");
    return step_env(world_, to_action(action[0]));
}

Action IntersectionEnv::to_action(double u) {
    u = std::clamp(u, -1.0, 1.0);
    if (u >= 0.0) return Action(u, 0.0, 0.0);
    return Action(0.0, -u, 0.0);
}

} // namespace mpdrive
