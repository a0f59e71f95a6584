#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "mpdrive/ddpg.hpp"
#include "mpdrive/errors.hpp"
#include "mpdrive/replay.hpp"
#include "mpdrive/rng.hpp"
#include "mpdrive/sim.hpp"

namespace {

using namespace mpdrive;

DdpgConfig tiny_config() {
    DdpgConfig cfg;
    cfg.obs_dim = 1;
    cfg.action_dim = 1;
    cfg.actor_hidden = {1};
    cfg.critic_hidden = {1};
    cfg.actor_batch_norm = false;
    cfg.gamma = 0.5;
    cfg.batch_size = 1;
    cfg.warmup = 1;
    cfg.replay_capacity = 16;
    return cfg;
}

std::vector<double*> trainable_ptrs(MlpParams& p) {
    std::vector<double*> out;
    for (auto& m : p.w)
        for (auto& x : m.a) out.push_back(&x);
    for (auto& v : p.b)
        for (auto& x : v) out.push_back(&x);
    for (auto& bn : p.bn) {
        for (auto& x : bn.gamma) out.push_back(&x);
        for (auto& x : bn.beta) out.push_back(&x);
    }
    return out;
}

Mat concat_cols_local(const Mat& a, const Mat& b) {
    Mat out(a.rows, a.cols + b.cols);
    for (int i = 0; i < a.rows; ++i) {
        std::copy(a.row(i), a.row(i) + a.cols, out.row(i));
        std::copy(b.row(i), b.row(i) + b.cols, out.row(i) + a.cols);
    }
    return out;
}

double actor_objective(const MlpSpec& aspec, const MlpParams& ap, const MlpSpec& cspec,
                       const MlpParams& cp, const Mat& s) {
    Mat a = forward(aspec, ap, s, Mode::train);
    Mat q = forward(cspec, cp, concat_cols_local(s, a), Mode::train);
    double sum = 0.0;
    for (int i = 0; i < q.rows; ++i) sum += q.at(i, 0);
    return -sum / q.rows;
}

double min_abs_preactivation(const MlpSpec& spec, const ForwardCache& cache) {
    double m = 1e30;
    for (int l = 0; l < spec.num_hidden(); ++l)
        for (double v : cache.layers[static_cast<std::size_t>(l)].act_in.a)
            m = std::min(m, std::abs(v));
    return m;
}

} // namespace

TEST_SUITE("ddpg") {

TEST_CASE("replay buffer evicts oldest entries first") {
    ReplayBuffer<int> buf(3);
    CHECK(buf.capacity() == 3);
    buf.push(1);
    buf.push(2);
    buf.push(3);
    buf.push(4); // evicts 1
    REQUIRE(buf.size() == 3);
    std::vector<int> held;
    for (std::size_t i = 0; i < buf.size(); ++i) held.push_back(buf.at(i));
    std::sort(held.begin(), held.end());
    CHECK(held == std::vector<int>{2, 3, 4});
    buf.push(5); // evicts 2
    held.clear();
    for (std::size_t i = 0; i < buf.size(); ++i) held.push_back(buf.at(i));
    std::sort(held.begin(), held.end());
    CHECK(held == std::vector<int>{3, 4, 5});
    CHECK_THROWS_AS(ReplayBuffer<int>(0), ContractViolation);
}

TEST_CASE("replay sampling is uniform with replacement and seeded") {
    ReplayBuffer<int> single(8);
    single.push(42);
    Rng rng(1);
    auto s = single.sample(5, rng);
    CHECK(s == std::vector<int>{42, 42, 42, 42, 42});

    ReplayBuffer<int> empty(8);
    Rng rng2(1);
    CHECK_THROWS_AS(empty.sample(1, rng2), InsufficientData);

    ReplayBuffer<int> buf(100);
    for (int i = 0; i < 100; ++i) buf.push(i);
    Rng ra(7), rb(7);
    CHECK(buf.sample(50, ra) == buf.sample(50, rb));
    // With replacement: 200 draws from 100 items must repeat something.
    Rng rc(9);
    auto many = buf.sample(200, rc);
    std::sort(many.begin(), many.end());
    CHECK(std::adjacent_find(many.begin(), many.end()) != many.end());
}

TEST_CASE("exploration schedule decays linearly then holds") {
    EpsilonSchedule sch;
    CHECK(sch.value(0, 1000) == 1.0);
    CHECK(sch.value(125, 1000) == doctest::Approx(0.525).epsilon(1e-12));
    CHECK(sch.value(250, 1000) == 0.05);
    CHECK(sch.value(999, 1000) == 0.05);
    CHECK(sch.value(5, 0) == 0.05);
    // Linearity: halfway through the decay sits halfway in value.
    double a = sch.value(50, 1000), b = sch.value(100, 1000), c = sch.value(150, 1000);
    CHECK(b == doctest::Approx((a + c) / 2.0).epsilon(1e-12));
}

TEST_CASE("bootstrapped targets come from the target networks") {
    DdpgAgent agent(tiny_config(), 0);
    // Zero nets everywhere, then give the target critic output bias 5.
    agent.actor_params() = make_params(agent.actor_net_spec());
    agent.critic_params() = make_params(agent.critic_net_spec());
    agent.actor_target_params() = make_params(agent.actor_net_spec());
    agent.critic_target_params() = make_params(agent.critic_net_spec());
    agent.critic_target_params().b[1][0] = 5.0;
    agent.critic_params().b[1][0] = 100.0; // online value must not leak in

    std::vector<Transition> batch{
        {{0.3}, {0.1}, {0.7}, 1.0, false},
        {{0.3}, {0.1}, {0.7}, 3.0, true},
    };
    auto y = agent.compute_targets(batch);
    REQUIRE(y.size() == 2);
    CHECK(y[0] == 3.5); // 1 + 0.5 * 5
    CHECK(y[1] == 3.0); // done masks the bootstrap

    SUBCASE("target actor chooses the bootstrap action") {
        // Target critic now passes the action through a relu unit.
        auto& ct = agent.critic_target_params();
        ct.b[1][0] = 0.0;
        ct.w[0].at(0, 1) = 1.0; // action column
        ct.w[1].at(0, 0) = 1.0;
        agent.actor_target_params().b[1][0] = 0.8;
        agent.actor_params().b[1][0] = -0.9; // online actor must not leak in
        auto y2 = agent.compute_targets(batch);
        CHECK(y2[0] == 1.0 + 0.5 * std::tanh(0.8));
        CHECK(y2[1] == 3.0);
    }
}

TEST_CASE("critic loss is the mean squared target error") {
    DdpgAgent agent(tiny_config(), 0);
    agent.critic_params() = make_params(agent.critic_net_spec());
    std::vector<Transition> batch{{{0.0}, {0.0}, {0.0}, 2.0, true}};
    double loss = agent.critic_update(batch);
    CHECK(loss == 4.0); // prediction 0 against target 2
    // The update moved the prediction toward the target.
    CHECK(agent.critic_value({0.0}, {0.0}) > 0.0);
}

TEST_CASE("critic regression on a frozen batch converges") {
    DdpgConfig cfg;
    cfg.obs_dim = 3;
    cfg.action_dim = 2;
    cfg.actor_hidden = {16, 16};
    cfg.critic_hidden = {16, 16};
    cfg.actor_batch_norm = false;
    cfg.gamma = 0.9;
    cfg.batch_size = 8;
    cfg.warmup = 8;
    cfg.replay_capacity = 64;
    DdpgAgent agent(cfg, 4);
    Rng rng(derive_seed(4, 1, 0));
    std::vector<Transition> batch;
    for (int i = 0; i < 8; ++i) {
        Transition t;
        for (int j = 0; j < 3; ++j) t.obs.push_back(rng.uniform(-1.0, 1.0));
        for (int j = 0; j < 2; ++j) t.action.push_back(rng.uniform(-1.0, 1.0));
        for (int j = 0; j < 3; ++j) t.next_obs.push_back(rng.uniform(-1.0, 1.0));
        t.reward = rng.uniform(-1.0, 1.0);
        t.done = i % 2 == 0;
        batch.push_back(std::move(t));
    }
    std::vector<double> losses;
    for (int i = 0; i < 300; ++i) losses.push_back(agent.critic_update(batch));
    CHECK(std::isfinite(losses.back()));
    CHECK(losses.back() < losses.front());
    CHECK(losses.back() < 0.2 * losses.front());
}

TEST_CASE("an action-blind critic sends the actor no gradient") {
    DdpgConfig cfg;
    cfg.obs_dim = 2;
    cfg.action_dim = 1;
    cfg.actor_hidden = {4};
    cfg.critic_hidden = {4};
    cfg.batch_size = 4;
    cfg.warmup = 4;
    cfg.replay_capacity = 32;
    DdpgAgent agent(cfg, 11);
    // Sever the critic's first-layer action column.
    for (int r = 0; r < agent.critic_params().w[0].rows; ++r)
        agent.critic_params().w[0].at(r, cfg.obs_dim) = 0.0;

    Rng rng(derive_seed(11, 2, 0));
    std::vector<Transition> batch;
    for (int i = 0; i < 4; ++i) {
        Transition t;
        t.obs = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        t.action = {rng.uniform(-1.0, 1.0)};
        t.next_obs = t.obs;
        batch.push_back(std::move(t));
    }
    MlpParams before = agent.actor_params();
    agent.actor_update(batch);
    auto bp = trainable_ptrs(before);
    auto ap = trainable_ptrs(agent.actor_params());
    REQUIRE(bp.size() == ap.size());
    for (std::size_t i = 0; i < bp.size(); ++i) CHECK(*bp[i] == *ap[i]);
}

TEST_CASE("actor gradient matches finite differences through the critic") {
    DdpgConfig cfg;
    cfg.obs_dim = 2;
    cfg.action_dim = 1;
    cfg.actor_hidden = {4};
    cfg.critic_hidden = {4};
    cfg.batch_size = 4;
    cfg.warmup = 4;
    cfg.replay_capacity = 32;

    const double h = 1e-5;
    bool found_case = false;
    for (std::uint64_t attempt = 0; attempt < 100 && !found_case; ++attempt) {
        DdpgAgent agent(cfg, derive_seed(90, attempt, 0));
        Rng rng(derive_seed(91, attempt, 0));
        std::vector<Transition> batch;
        Mat s(4, 2);
        for (int i = 0; i < 4; ++i) {
            Transition t;
            t.obs = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
            t.action = {0.0};
            t.next_obs = t.obs;
            s.at(i, 0) = t.obs[0];
            s.at(i, 1) = t.obs[1];
            batch.push_back(std::move(t));
        }
        // Reject configurations near a relu kink so finite differences stay
        // on one linear piece.
        ForwardCache acache, ccache;
        Mat a = forward(agent.actor_net_spec(), agent.actor_params(), s, Mode::train, &acache);
        forward(agent.critic_net_spec(), agent.critic_params(), concat_cols_local(s, a),
                Mode::train, &ccache);
        if (min_abs_preactivation(agent.actor_net_spec(), acache) < 1e-3) continue;
        if (min_abs_preactivation(agent.critic_net_spec(), ccache) < 1e-3) continue;
        found_case = true;

        Gradients g = agent.actor_gradient(batch);
        MlpParams probe = agent.actor_params();
        auto probe_ptrs = trainable_ptrs(probe);
        MlpParams grads = g.params;
        auto grad_ptrs = trainable_ptrs(grads);
        REQUIRE(probe_ptrs.size() == grad_ptrs.size());
        for (std::size_t i = 0; i < probe_ptrs.size(); ++i) {
            double saved = *probe_ptrs[i];
            *probe_ptrs[i] = saved + h;
            double fp = actor_objective(agent.actor_net_spec(), probe, agent.critic_net_spec(),
                                        agent.critic_params(), s);
            *probe_ptrs[i] = saved - h;
            double fm = actor_objective(agent.actor_net_spec(), probe, agent.critic_net_spec(),
                                        agent.critic_params(), s);
            *probe_ptrs[i] = saved;
            double fd = (fp - fm) / (2.0 * h);
            double analytic = *grad_ptrs[i];
            double err = std::abs(analytic - fd) /
                         std::max({1e-6, std::abs(analytic), std::abs(fd)});
            CAPTURE(i);
            CHECK(err < 1e-3);
        }
    }
    REQUIRE(found_case);
}

TEST_CASE("a trained actor recovers the reward-optimal action") {
    DdpgConfig cfg;
    cfg.obs_dim = 1;
    cfg.action_dim = 1;
    cfg.actor_hidden = {32, 32};
    cfg.critic_hidden = {32, 32};
    cfg.actor_lr = 1e-3;
    cfg.critic_lr = 1e-3;
    cfg.batch_size = 64;
    cfg.warmup = 64;
    cfg.replay_capacity = 4000;
    DdpgAgent agent(cfg, 3);

    // One-step task: reward -(a - 0.3)^2, so Q(s, a) has its peak at 0.3
    // for every state.
    Rng data(derive_seed(3, 5, 0));
    for (int i = 0; i < 3000; ++i) {
        double s = data.uniform(0.0, 1.0);
        double a = data.uniform(-1.0, 1.0);
        agent.remember({{s}, {a}, {s}, -(a - 0.3) * (a - 0.3), true});
    }
    Rng sampler(derive_seed(3, 6, 0));
    for (int i = 0; i < 2500; ++i)
        agent.critic_update(agent.replay().sample(64, sampler));
    for (int i = 0; i < 1000; ++i)
        agent.actor_update(agent.replay().sample(64, sampler));

    for (double s : {0.25, 0.5, 0.75}) {
        double a = agent.act({s})[0];
        CAPTURE(s);
        CHECK(std::abs(a - 0.3) < 0.05);
    }
}

TEST_CASE("full exploration covers the action bounds uniformly") {
    DdpgConfig cfg;
    cfg.obs_dim = 3;
    cfg.action_dim = 3;
    cfg.actor_hidden = {8};
    cfg.critic_hidden = {8};
    cfg.batch_size = 4;
    cfg.warmup = 4;
    cfg.replay_capacity = 32;
    DdpgAgent agent(cfg, 21);
    std::vector<std::pair<double, double>> bounds{{0.0, 1.0}, {0.0, 1.0}, {-1.0, 1.0}};
    std::vector<double> obs{0.1, -0.2, 0.3};
    double sums[3] = {0, 0, 0};
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        auto a = agent.act_exploring(obs, 1.0, bounds);
        for (int j = 0; j < 3; ++j) {
            CHECK(a[static_cast<std::size_t>(j)] >= bounds[static_cast<std::size_t>(j)].first);
            CHECK(a[static_cast<std::size_t>(j)] <= bounds[static_cast<std::size_t>(j)].second);
            sums[j] += a[static_cast<std::size_t>(j)];
        }
    }
    CHECK(sums[0] / n == doctest::Approx(0.5).epsilon(0.04));
    CHECK(sums[1] / n == doctest::Approx(0.5).epsilon(0.04));
    CHECK(std::abs(sums[2] / n) < 0.02);

    // Zero epsilon always follows the deterministic policy.
    CHECK(agent.act_exploring(obs, 0.0, bounds) == agent.act(obs));
    CHECK_THROWS_AS(agent.act_exploring(obs, 0.5, {{0.0, 1.0}}), ContractViolation);
}

TEST_CASE("target networks start equal and trail the online nets") {
    DdpgConfig cfg;
    cfg.obs_dim = 2;
    cfg.action_dim = 1;
    cfg.actor_hidden = {4};
    cfg.critic_hidden = {4};
    cfg.actor_batch_norm = false;
    cfg.batch_size = 2;
    cfg.warmup = 2;
    cfg.replay_capacity = 32;
    cfg.tau = 0.01;
    DdpgAgent agent(cfg, 8);
    CHECK(agent.critic_params().w[0].a == agent.critic_target_params().w[0].a);
    CHECK(agent.actor_params().w[0].a == agent.actor_target_params().w[0].a);

    std::vector<Transition> batch{
        {{0.1, 0.2}, {0.3}, {0.4, 0.5}, 1.0, false},
        {{-0.3, 0.9}, {-0.2}, {0.0, 0.1}, -0.5, true},
    };
    std::vector<double> target_before = agent.critic_target_params().w[0].a;
    std::vector<double> online_before = agent.critic_params().w[0].a;
    agent.critic_update(batch);
    agent.actor_update(batch);
    // Online nets moved; targets have not.
    CHECK(agent.critic_params().w[0].a != online_before);
    CHECK(agent.critic_target_params().w[0].a == target_before);

    agent.update_targets();
    const auto& tw = agent.critic_target_params().w[0].a;
    const auto& ow = agent.critic_params().w[0].a;
    bool moved = false;
    for (std::size_t i = 0; i < tw.size(); ++i) {
        if (ow[i] == target_before[i]) continue;
        // Strictly between the old target and the online value.
        CHECK(std::abs(tw[i] - ow[i]) < std::abs(target_before[i] - ow[i]));
        CHECK(std::abs(tw[i] - target_before[i]) < std::abs(target_before[i] - ow[i]));
        CHECK(tw[i] == doctest::Approx(0.01 * ow[i] + 0.99 * target_before[i]).epsilon(1e-12));
        moved = moved || tw[i] != target_before[i];
    }
    CHECK(moved);
    // The actor target blended as well.
    CHECK(agent.actor_target_params().w[0].a != agent.actor_params().w[0].a);
}

TEST_CASE("training runs are bit-identical per seed") {
    DdpgConfig cfg;
    cfg.obs_dim = 8;
    cfg.action_dim = 1;
    cfg.actor_hidden = {8, 8};
    cfg.critic_hidden = {8, 8};
    cfg.batch_size = 4;
    cfg.warmup = 10;
    cfg.replay_capacity = 500;
    ScenarioConfig sc;
    sc.subtasks = {false, false, false};
    sc.max_steps = 60;

    auto run = [&](std::uint64_t seed) {
        IntersectionEnv env(sc);
        DdpgAgent agent(cfg, seed);
        std::vector<double> log;
        for (std::uint64_t ep = 0; ep < 3; ++ep) {
            auto obs = env.reset(ep);
            auto stats = agent.train_episode(env, obs, 0.4);
            log.push_back(stats.undiscounted_return);
            log.push_back(static_cast<double>(stats.steps));
            log.push_back(stats.mean_critic_loss);
        }
        auto probe = agent.act(env.canonical_start_obs());
        log.insert(log.end(), probe.begin(), probe.end());
        return log;
    };
    auto a = run(5), b = run(5), c = run(6);
    CHECK(a == b);
    CHECK(a != c);
}

TEST_CASE("policy snapshots are deep copies") {
    DdpgConfig cfg;
    cfg.obs_dim = 2;
    cfg.action_dim = 1;
    cfg.actor_hidden = {4};
    cfg.critic_hidden = {4};
    cfg.batch_size = 2;
    cfg.warmup = 2;
    cfg.replay_capacity = 32;
    DdpgAgent agent(cfg, 13);
    std::vector<double> obs{0.3, -0.2};
    PolicyNets snap = agent.snapshot();
    auto before = agent.act(obs);
    CHECK(snap.act(obs) == before);

    std::vector<Transition> batch{
        {{0.1, 0.2}, {0.3}, {0.4, 0.5}, 1.0, false},
        {{-0.3, 0.9}, {-0.2}, {0.0, 0.1}, -0.5, true},
    };
    for (int i = 0; i < 5; ++i) {
        agent.critic_update(batch);
        agent.actor_update(batch);
    }
    CHECK(snap.act(obs) == before);
    CHECK(agent.act(obs) != before);
}

TEST_CASE("training before the warmup is refused") {
    DdpgAgent agent(tiny_config(), 0);
    CHECK_THROWS_AS(agent.train_step(), InsufficientData);
    agent.remember({{0.0}, {0.0}, {0.0}, 0.0, true});
    CHECK(agent.ready());
    CHECK_NOTHROW(agent.train_step());
}

TEST_CASE("configuration validation rejects unusable settings") {
    DdpgConfig cfg = tiny_config();
    cfg.obs_dim = 0;
    CHECK_THROWS_AS(DdpgAgent(cfg, 0), ContractViolation);
    cfg = tiny_config();
    cfg.actor_batch_norm = true; // batch_size 1 cannot feed batch norm
    CHECK_THROWS_AS(DdpgAgent(cfg, 0), ContractViolation);
    cfg = tiny_config();
    cfg.warmup = 0;
    CHECK_THROWS_AS(DdpgAgent(cfg, 0), ContractViolation);
    cfg = tiny_config();
    cfg.gamma = 1.5;
    CHECK_THROWS_AS(DdpgAgent(cfg, 0), ContractViolation);
}

TEST_CASE("actor outputs respect the tanh range") {
    DdpgConfig cfg;
    cfg.obs_dim = 4;
    cfg.action_dim = 2;
    cfg.actor_hidden = {16};
    cfg.critic_hidden = {16};
    cfg.batch_size = 4;
    cfg.warmup = 4;
    cfg.replay_capacity = 32;
    DdpgAgent agent(cfg, 99);
    Rng rng(17);
    for (int i = 0; i < 50; ++i) {
        std::vector<double> obs;
        for (int j = 0; j < 4; ++j) obs.push_back(rng.uniform(-5.0, 5.0));
        for (double a : agent.act(obs)) {
            CHECK(a >= -1.0);
            CHECK(a <= 1.0);
        }
    }
}

} // TEST_SUITE("ddpg")
