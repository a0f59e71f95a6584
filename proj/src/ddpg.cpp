#include "mpdrive/ddpg.hpp"

#include <algorithm>
#include <cmath>

#include "mpdrive/errors.hpp"

namespace mpdrive {

namespace {

Mat stack_obs(const std::vector<Transition>& batch, bool next) {
    Mat out(static_cast<int>(batch.size()), static_cast<int>(
            next ? batch.front().next_obs.size() : batch.front().obs.size()));
    for (int i = 0; i < out.rows; ++i) {
        const auto& src = next ? batch[static_cast<std::size_t>(i)].next_obs
                               : batch[static_cast<std::size_t>(i)].obs;
        if (static_cast<int>(src.size()) != out.cols)
            throw ContractViolation("transition observation width varies within batch");
        std::copy(src.begin(), src.end(), out.row(i));
    }
    return out;
}

Mat concat_cols(const Mat& a, const Mat& b) {
    if (a.rows != b.rows) throw ContractViolation("concat_cols: row mismatch");
    Mat out(a.rows, a.cols + b.cols);
    for (int i = 0; i < a.rows; ++i) {
        std::copy(a.row(i), a.row(i) + a.cols, out.row(i));
        std::copy(b.row(i), b.row(i) + b.cols, out.row(i) + a.cols);
    }
    return out;
}

} // namespace

double EpsilonSchedule::value(std::int64_t step, std::int64_t horizon) const {
    if (horizon <= 0) return end;
    double span = decay_fraction * static_cast<double>(horizon);
    if (span <= 0.0) return end;
    double p = static_cast<double>(step) / span;
    if (p <= 0.0) return start;
    if (p >= 1.0) return end;
    return start + (end - start) * p;
}

void DdpgConfig::validate() const {
    if (obs_dim <= 0 || action_dim <= 0) throw ContractViolation("ddpg needs positive dims");
    if (actor_hidden.empty() || critic_hidden.empty())
        throw ContractViolation("ddpg needs at least one hidden layer");
    for (int h : actor_hidden)
        if (h <= 0) throw ContractViolation("bad actor hidden width");
    for (int h : critic_hidden)
        if (h <= 0) throw ContractViolation("bad critic hidden width");
    if (actor_lr <= 0.0 || critic_lr <= 0.0) throw ContractViolation("learning rates must be positive");
    if (gamma <= 0.0 || gamma > 1.0) throw ContractViolation("gamma outside (0,1]");
    if (tau <= 0.0 || tau > 1.0) throw ContractViolation("tau outside (0,1]");
    if (grad_clip <= 0.0) throw ContractViolation("grad_clip must be positive");
    if (batch_size < 1) throw ContractViolation("batch_size must be positive");
    if (actor_batch_norm && batch_size < 2)
        throw ContractViolation("batch norm needs batch_size >= 2");
    if (warmup < batch_size) throw ContractViolation("warmup smaller than batch_size");
    if (replay_capacity < static_cast<std::size_t>(batch_size))
        throw ContractViolation("replay smaller than batch_size");
}

MlpSpec DdpgConfig::actor_spec() const {
    MlpSpec s;
    s.layer_sizes.push_back(obs_dim);
    for (int h : actor_hidden) s.layer_sizes.push_back(h);
    s.layer_sizes.push_back(action_dim);
    s.output_activation = OutputActivation::tanh;
    s.batch_norm.assign(actor_hidden.size(), actor_batch_norm ? 1 : 0);
    return s;
}

MlpSpec DdpgConfig::critic_spec() const {
    MlpSpec s;
    s.layer_sizes.push_back(obs_dim + action_dim);
    for (int h : critic_hidden) s.layer_sizes.push_back(h);
    s.layer_sizes.push_back(1);
    s.output_activation = OutputActivation::linear;
    return s;
}

std::vector<double> PolicyNets::act(const std::vector<double>& obs) const {
    return forward_one(actor_spec, actor, obs);
}

DdpgAgent::DdpgAgent(const DdpgConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      actor_spec_(cfg.actor_spec()),
      critic_spec_(cfg.critic_spec()),
      replay_(cfg.replay_capacity),
      rng_(derive_seed(seed, 0xD0, 0)) {
    cfg_.validate();
    Rng actor_rng(derive_seed(seed, 0xD0, 1));
    Rng critic_rng(derive_seed(seed, 0xD0, 2));
    actor_ = init_params(actor_spec_, actor_rng, cfg_.actor_final_init);
    critic_ = init_params(critic_spec_, critic_rng);
    actor_target_ = actor_;
    critic_target_ = critic_;
    actor_adam_ = make_adam(actor_spec_, cfg_.actor_lr);
    critic_adam_ = make_adam(critic_spec_, cfg_.critic_lr);
}

std::vector<double> DdpgAgent::act(const std::vector<double>& obs) const {
    return forward_one(actor_spec_, actor_, obs);
}

std::vector<double> DdpgAgent::act_exploring(const std::vector<double>& obs, double epsilon,
                                             const std::vector<std::pair<double, double>>& bounds) {
    if (static_cast<int>(bounds.size()) != cfg_.action_dim)
        throw ContractViolation("action bounds do not match the action dimension");
    if (rng_.bernoulli(epsilon)) {
        std::vector<double> a(bounds.size());
        for (std::size_t i = 0; i < bounds.size(); ++i)
            a[i] = rng_.uniform(bounds[i].first, bounds[i].second);
        return a;
    }
    return act(obs);
}

double DdpgAgent::critic_value(const std::vector<double>& obs,
                               const std::vector<double>& action) const {
    std::vector<double> x = obs;
    x.insert(x.end(), action.begin(), action.end());
    return forward_one(critic_spec_, critic_, x)[0];
}

bool DdpgAgent::ready() const {
    return replay_.size() >= static_cast<std::size_t>(cfg_.warmup) &&
           replay_.size() >= static_cast<std::size_t>(cfg_.batch_size);
}

std::vector<double> DdpgAgent::compute_targets(const std::vector<Transition>& batch) const {
    if (batch.empty()) throw ContractViolation("empty batch");
    Mat s2 = stack_obs(batch, true);
    Mat a2 = forward(actor_spec_, actor_target_, s2, Mode::eval);
    Mat q2 = forward(critic_spec_, critic_target_, concat_cols(s2, a2), Mode::eval);
    std::vector<double> y(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        double mask = batch[i].done ? 0.0 : 1.0;
        y[i] = batch[i].reward + cfg_.gamma * mask * q2.at(static_cast<int>(i), 0);
    }
    return y;
}

double DdpgAgent::critic_update(const std::vector<Transition>& batch) {
    std::vector<double> y = compute_targets(batch);
    Mat s = stack_obs(batch, false);
    Mat a(static_cast<int>(batch.size()), cfg_.action_dim);
    for (int i = 0; i < a.rows; ++i) {
        const auto& src = batch[static_cast<std::size_t>(i)].action;
        if (static_cast<int>(src.size()) != cfg_.action_dim)
            throw ContractViolation("transition action width varies within batch");
        std::copy(src.begin(), src.end(), a.row(i));
    }
    Mat x = concat_cols(s, a);
    ForwardCache cache;
    Mat q = forward(critic_spec_, critic_, x, Mode::train, &cache);
    const int n = q.rows;
    double loss = 0.0;
    Mat upstream(n, 1);
    for (int i = 0; i < n; ++i) {
        double diff = q.at(i, 0) - y[static_cast<std::size_t>(i)];
        loss += diff * diff;
        upstream.at(i, 0) = 2.0 * diff / n;
    }
    loss /= n;
    Gradients g = backward(critic_spec_, critic_, cache, upstream);
    clip_global_norm(g.params, cfg_.grad_clip);
    adam_step(critic_, g.params, critic_adam_);
    return loss;
}

Gradients DdpgAgent::actor_backward(const std::vector<Transition>& batch,
                                    ForwardCache& actor_cache) const {
    if (batch.empty()) throw ContractViolation("empty batch");
    Mat s = stack_obs(batch, false);
    Mat a = forward(actor_spec_, actor_, s, Mode::train, &actor_cache);
    ForwardCache critic_cache;
    Mat q = forward(critic_spec_, critic_, concat_cols(s, a), Mode::train, &critic_cache);
    Mat upstream(q.rows, 1);
    upstream.fill(-1.0 / q.rows); // descend on -mean(Q)
    Gradients through_critic = backward(critic_spec_, critic_, critic_cache, upstream);
    Mat action_grad(q.rows, cfg_.action_dim);
    for (int i = 0; i < q.rows; ++i)
        for (int j = 0; j < cfg_.action_dim; ++j)
            action_grad.at(i, j) = through_critic.inputs.at(i, cfg_.obs_dim + j);
    return backward(actor_spec_, actor_, actor_cache, action_grad);
}

Gradients DdpgAgent::actor_gradient(const std::vector<Transition>& batch) const {
    ForwardCache cache;
    return actor_backward(batch, cache);
}

void DdpgAgent::actor_update(const std::vector<Transition>& batch) {
    ForwardCache cache;
    Gradients g = actor_backward(batch, cache);
    clip_global_norm(g.params, cfg_.grad_clip);
    adam_step(actor_, g.params, actor_adam_);
    if (actor_spec_.any_bn()) update_running_stats(actor_spec_, actor_, cache);
}

void DdpgAgent::update_targets() {
    soft_update(actor_target_, actor_, cfg_.tau);
    soft_update(critic_target_, critic_, cfg_.tau);
}

double DdpgAgent::train_step() {
    if (!ready()) throw InsufficientData("train step before the replay warmup filled");
    std::vector<Transition> batch = replay_.sample(static_cast<std::size_t>(cfg_.batch_size), rng_);
    double loss = critic_update(batch);
    actor_update(batch);
    update_targets();
    return loss;
}

DdpgAgent::EpisodeStats DdpgAgent::train_episode(Env& env, std::vector<double> obs,
                                                 double epsilon) {
    EpisodeStats stats;
    double loss_sum = 0.0;
    while (true) {
        std::vector<double> a = act_exploring(obs, epsilon, env.all_action_bounds());
        StepResult r = env.step(a);
        replay_.push({obs, a, r.obs, r.reward, r.done});
        stats.undiscounted_return += r.reward;
        stats.steps += 1;
        stats.r_vel += r.info.r_vel;
        stats.r_living += r.info.r_living;
        stats.r_col += r.info.r_col;
        stats.r_goal += r.info.r_goal;
        stats.last_info = r.info;
        obs = r.obs;
        if (ready()) {
            loss_sum += train_step();
            stats.updates += 1;
        }
        if (r.done) break;
    }
    if (stats.updates > 0) stats.mean_critic_loss = loss_sum / stats.updates;
    return stats;
}

DdpgAgent::EpisodeStats DdpgAgent::eval_episode(Env& env, std::vector<double> obs) const {
    EpisodeStats stats;
    while (true) {
        StepResult r = env.step(act(obs));
        stats.undiscounted_return += r.reward;
        stats.steps += 1;
        stats.r_vel += r.info.r_vel;
        stats.r_living += r.info.r_living;
        stats.r_col += r.info.r_col;
        stats.r_goal += r.info.r_goal;
        stats.last_info = r.info;
        obs = r.obs;
        if (r.done) break;
    }
    return stats;
}

PolicyNets DdpgAgent::snapshot() const {
    return {actor_spec_, critic_spec_, actor_, critic_};
}

} // namespace mpdrive
