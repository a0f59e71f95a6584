#include "mpdrive/rl_decision.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "mpdrive/errors.hpp"

namespace mpdrive {

namespace {

double discount_power(double gamma, int duration, bool smdp) {
    if (!smdp) return gamma;
    double g = 1.0;
    for (int k = 0; k < duration; ++k) g *= gamma;
    return g;
}

void append_output_row(MlpParams& p, const std::vector<double>& row, double bias) {
    Mat& w = p.w.back();
    Mat grown(w.rows + 1, w.cols);
    std::copy(w.a.begin(), w.a.end(), grown.a.begin());
    std::copy(row.begin(), row.end(), grown.row(w.rows));
    w = std::move(grown);
    p.b.back().push_back(bias);
}

void check_shapes(const MlpSpec& spec, const MlpParams& p, const char* who) {
    const int layers = spec.num_layers();
    if (static_cast<int>(p.w.size()) != layers || static_cast<int>(p.b.size()) != layers)
        throw ContractViolation(std::string(who) + ": wrong layer count");
    for (int l = 0; l < layers; ++l) {
        if (p.w[l].rows != spec.layer_sizes[l + 1] || p.w[l].cols != spec.layer_sizes[l] ||
            static_cast<int>(p.b[l].size()) != spec.layer_sizes[l + 1])
            throw ContractViolation(std::string(who) + ": tensor shape mismatch");
    }
}

} // namespace

MlpSpec DecisionConfig::net_spec(int output_width) const {
    MlpSpec s;
    s.layer_sizes.push_back(obs_dim);
    for (int h : hidden) s.layer_sizes.push_back(h);
    s.layer_sizes.push_back(output_width);
    s.output_activation = OutputActivation::linear;
    return s;
}

void DecisionConfig::validate() const {
    if (obs_dim < 1) throw ContractViolation("DecisionConfig: obs_dim must be >= 1");
    if (hidden.empty()) throw ContractViolation("DecisionConfig: need at least one hidden layer");
    for (int h : hidden)
        if (h < 1) throw ContractViolation("DecisionConfig: hidden sizes must be >= 1");
    if (lr <= 0.0) throw ContractViolation("DecisionConfig: lr must be positive");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ContractViolation("DecisionConfig: gamma outside [0, 1]");
    if (!(tau > 0.0 && tau <= 1.0)) throw ContractViolation("DecisionConfig: tau outside (0, 1]");
    if (grad_clip <= 0.0) throw ContractViolation("DecisionConfig: grad_clip must be positive");
    if (batch_size < 1) throw ContractViolation("DecisionConfig: batch_size must be >= 1");
    if (replay_capacity < batch_size)
        throw ContractViolation("DecisionConfig: replay must hold at least one batch");
    if (t_max < 1) throw ContractViolation("DecisionConfig: t_max must be >= 1");
    if (new_row_range <= 0.0)
        throw ContractViolation("DecisionConfig: new_row_range must be positive");
}

DecisionAgent::DecisionAgent(const DecisionConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      replay_(static_cast<std::size_t>(cfg.replay_capacity > 0 ? cfg.replay_capacity : 1)),
      rng_(derive_seed(seed, 0xDE, 0)) {
    cfg_.validate();
    spec_ = cfg_.net_spec(0);
    Rng init_rng(derive_seed(seed, 0xDE, 1));
    online_ = init_params(spec_, init_rng);
    target_ = online_;
    adam_ = make_adam(spec_, cfg_.lr);
}

void DecisionAgent::grow_output() {
    const int in_width = spec_.layer_sizes[spec_.layer_sizes.size() - 2];
    std::vector<double> row(static_cast<std::size_t>(in_width));
    for (double& v : row) v = rng_.uniform(-cfg_.new_row_range, cfg_.new_row_range);
    const double bias = rng_.uniform(-cfg_.new_row_range, cfg_.new_row_range);
    append_output_row(online_, row, bias);
    append_output_row(target_, row, bias);
    const std::vector<double> zeros(row.size(), 0.0);
    append_output_row(adam_.m, zeros, 0.0);
    append_output_row(adam_.v, zeros, 0.0);
    spec_.layer_sizes.back() += 1;
    ++grows_;
}

std::vector<double> DecisionAgent::q_values(const std::vector<double>& s) const {
    return forward_one(spec_, online_, s);
}

std::vector<double> DecisionAgent::q_values_target(const std::vector<double>& s) const {
    return forward_one(spec_, target_, s);
}

int DecisionAgent::select_option(const std::vector<double>& s, const std::vector<int>& available,
                                 double epsilon, Rng& rng) const {
    if (static_cast<int>(s.size()) != cfg_.obs_dim)
        throw ContractViolation("select_option: observation width mismatch");
    if (available.empty())
        throw NoAvailableOption("select_option: no option is available in this state");
    for (int id : available)
        if (id < 0 || id >= option_count())
            throw ContractViolation("select_option: option id outside the head");
    if (available.size() == 1) return available.front();
    if (rng.bernoulli(epsilon))
        return available[static_cast<std::size_t>(
            rng.uniform_int(static_cast<int>(available.size())))];
    const std::vector<double> q = q_values(s);
    int best = available.front();
    for (std::size_t i = 1; i < available.size(); ++i) {
        const int id = available[i];
        if (q[static_cast<std::size_t>(id)] > q[static_cast<std::size_t>(best)] ||
            (q[static_cast<std::size_t>(id)] == q[static_cast<std::size_t>(best)] && id < best))
            best = id;
    }
    return best;
}

void DecisionAgent::validate_transition(const SmdpTransition& t, const char* who) const {
    if (static_cast<int>(t.s.size()) != cfg_.obs_dim ||
        static_cast<int>(t.next_s.size()) != cfg_.obs_dim)
        throw InvalidBatch(std::string(who) + ": observation width mismatch");
    if (t.option < 0 || t.option >= option_count())
        throw InvalidBatch(std::string(who) + ": option id outside the head");
    if (t.duration < 1) throw InvalidBatch(std::string(who) + ": duration must be >= 1");
    if (!std::isfinite(t.reward)) throw InvalidBatch(std::string(who) + ": non-finite reward");
}

std::vector<double> DecisionAgent::ddqn_target(const std::vector<SmdpTransition>& batch) const {
    if (batch.empty()) throw InvalidBatch("ddqn_target: empty batch");
    const int width = option_count();
    if (width < 1) throw ContractViolation("ddqn_target: the head has no options");
    const int n = static_cast<int>(batch.size());
    Mat next(n, cfg_.obs_dim);
    for (int i = 0; i < n; ++i) {
        validate_transition(batch[static_cast<std::size_t>(i)], "ddqn_target");
        const std::vector<double>& s = batch[static_cast<std::size_t>(i)].next_s;
        std::copy(s.begin(), s.end(), next.row(i));
    }
    const Mat q_online = forward(spec_, online_, next, Mode::eval);
    const Mat q_target = forward(spec_, target_, next, Mode::eval);
    std::vector<double> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const SmdpTransition& t = batch[static_cast<std::size_t>(i)];
        double bootstrap = 0.0;
        if (!t.done) {
            const double* row = q_online.row(i);
            int best = 0;
            for (int o = 1; o < width; ++o)
                if (row[o] > row[best]) best = o;
            bootstrap = discount_power(cfg_.gamma, t.duration, cfg_.smdp_gamma_power) *
                        q_target.at(i, best);
        }
        y[static_cast<std::size_t>(i)] = t.reward + bootstrap;
    }
    return y;
}

double DecisionAgent::decision_update(const std::vector<SmdpTransition>& batch) {
    const std::vector<double> y = ddqn_target(batch);
    const int n = static_cast<int>(batch.size());
    const int width = option_count();
    Mat states(n, cfg_.obs_dim);
    for (int i = 0; i < n; ++i) {
        const std::vector<double>& s = batch[static_cast<std::size_t>(i)].s;
        std::copy(s.begin(), s.end(), states.row(i));
    }
    ForwardCache cache;
    const Mat q = forward(spec_, online_, states, Mode::train, &cache);
    Mat upstream(n, width);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const int o = batch[static_cast<std::size_t>(i)].option;
        const double diff = q.at(i, o) - y[static_cast<std::size_t>(i)];
        loss += diff * diff;
        upstream.at(i, o) = 2.0 * diff / n;
    }
    loss /= n;
    Gradients g = backward(spec_, online_, cache, upstream);
    clip_global_norm(g.params, cfg_.grad_clip);
    adam_step(online_, g.params, adam_);
    soft_update(target_, online_, cfg_.tau);
    return loss;
}

void DecisionAgent::remember(SmdpTransition t) {
    validate_transition(t, "remember");
    replay_.push(std::move(t));
}

double DecisionAgent::train_step() {
    if (!ready()) throw InsufficientData("train_step: replay holds less than one batch");
    return decision_update(replay_.sample(static_cast<std::size_t>(cfg_.batch_size), rng_));
}

DecisionNetSnapshot DecisionAgent::snapshot() const { return {spec_, online_, target_}; }

void DecisionAgent::restore(const DecisionNetSnapshot& snap) {
    snap.spec.validate();
    if (!(snap.spec == cfg_.net_spec(snap.spec.output_size())))
        throw ContractViolation("restore: snapshot architecture does not match the config");
    check_shapes(snap.spec, snap.online, "restore: online");
    check_shapes(snap.spec, snap.target, "restore: target");
    spec_ = snap.spec;
    online_ = snap.online;
    target_ = snap.target;
    adam_ = make_adam(spec_, cfg_.lr);
    grows_ = spec_.output_size();
}

OptionExecution execute_option(Env& env, const MotionPrimitive& mp,
                               const std::vector<double>& obs, double gamma, int t_max) {
    if (t_max < 1) throw ContractViolation("execute_option: t_max must be >= 1");
    if (!(gamma >= 0.0 && gamma <= 1.0))
        throw ContractViolation("execute_option: gamma outside [0, 1]");
    if (static_cast<int>(obs.size()) != env.obs_dim())
        throw ContractViolation("execute_option: observation width mismatch");
    OptionExecution out;
    out.transition.s = obs;
    out.transition.option = mp.id;
    std::vector<double> cur = obs;
    double discounted = 0.0;
    double scale = 1.0;
    bool done = false;
    int d = 0;
    while (d < t_max) {
        const StepResult r = env.step(mp.policy.act(cur));
        ++d;
        discounted += scale * r.reward;
        scale *= gamma;
        out.step_rewards.push_back(r.reward);
        out.r_vel += r.info.r_vel;
        out.r_living += r.info.r_living;
        out.r_col += r.info.r_col;
        out.r_goal += r.info.r_goal;
        out.last_info = r.info;
        cur = r.obs;
        done = r.done;
        if (done || mp.termination.contains(cur)) break;
    }
    out.transition.reward = discounted;
    out.transition.duration = d;
    out.transition.next_s = std::move(cur);
    out.transition.done = done;
    return out;
}

} // namespace mpdrive
