#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "mpdrive/errors.hpp"
#include "mpdrive/mp_library.hpp"
#include "mpdrive/rng.hpp"
#include "mpdrive/skill_chain.hpp"

using namespace mpdrive;
namespace fs = std::filesystem;

namespace {

std::vector<std::vector<double>> cloud(const std::vector<double>& center, int n, double spread,
                                       std::uint64_t seed) {
    Rng rng(derive_seed(seed, 33, 0));
    std::vector<std::vector<double>> pts(static_cast<std::size_t>(n));
    for (auto& p : pts) {
        p = center;
        for (auto& x : p) x += rng.uniform(-spread, spread);
    }
    return pts;
}

std::shared_ptr<const InitiationClassifier> classifier_at(const std::vector<double>& center,
                                                          std::uint64_t seed,
                                                          std::vector<int> dims = {}) {
    InitiationFitConfig cfg;
    return std::make_shared<const InitiationClassifier>(
        fit_initiation(cloud(center, 30, 0.1, seed), dims, cfg));
}

MotionPrimitive make_mp(int id, std::uint64_t seed, TerminationSet termination,
                        std::shared_ptr<const InitiationClassifier> initiation) {
    DdpgConfig cfg;
    cfg.obs_dim = 4;
    cfg.action_dim = 1;
    cfg.actor_hidden = {8, 8};
    cfg.critic_hidden = {8};
    MotionPrimitive mp;
    mp.id = id;
    mp.initiation = std::move(initiation);
    mp.policy = DdpgAgent(cfg, seed).snapshot();
    mp.termination = std::move(termination);
    mp.metadata.creation_phase = 2;
    mp.metadata.training_episodes = 150;
    mp.metadata.subtask = "lane_change";
    return mp;
}

bool params_equal(const MlpParams& a, const MlpParams& b) {
    if (a.w.size() != b.w.size() || a.b.size() != b.b.size() || a.bn.size() != b.bn.size())
        return false;
    for (std::size_t i = 0; i < a.w.size(); ++i)
        if (a.w[i].a != b.w[i].a || a.b[i] != b.b[i]) return false;
    for (std::size_t i = 0; i < a.bn.size(); ++i) {
        if (a.bn[i].gamma != b.bn[i].gamma || a.bn[i].beta != b.bn[i].beta) return false;
        if (a.bn[i].running_mean != b.bn[i].running_mean) return false;
        if (a.bn[i].running_var != b.bn[i].running_var) return false;
    }
    return true;
}

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("mpdrive_lib_" + name);
    fs::remove_all(p);
    return p;
}

Library sample_library() {
    Library lib;
    auto clf0 = classifier_at({5.0, 5.0, 0.0, 0.5}, 1, {0, 2});
    auto clf1 = classifier_at({0.0, 0.0, 0.3, 0.5}, 2, {0, 2});
    lib.mps.push_back(make_mp(0, 10, TerminationSet{GoalRegion{{0, 1}, {0.1, 0.2}, 0.3}}, clf0));
    lib.mps.push_back(make_mp(1, 11, TerminationSet{clf0}, clf1));
    lib.mps.push_back(make_mp(2, 12, TerminationSet{GoalRegion{{3}, {0.5}, 1.0}}, clf1));
    lib.mps[2].metadata.subtask = "turn_around";
    lib.creation_log = {"phase 2: subtask lane_change -> mp 0..1",
                        "phase 2: subtask turn_around -> mp 2..2"};
    return lib;
}

} // namespace

TEST_SUITE("library") {

TEST_CASE("crc32 matches the published check values") {
    const unsigned char check[] = {'1', '2', '3', '4', '5', '6', '7', '8', '9'};
    CHECK(crc32_ieee(check, 9) == 0xCBF43926u);
    CHECK(crc32_ieee(check, 0) == 0x00000000u);
    const unsigned char a[] = {'a'};
    CHECK(crc32_ieee(a, 1) == 0xE8B7BE43u);
}

TEST_CASE("available options are exactly the accepting classifiers") {
    Library lib;
    lib.mps.push_back(make_mp(0, 20, TerminationSet{GoalRegion{{0}, {0.0}, 1.0}},
                              classifier_at({0.0, 0.0}, 5)));
    lib.mps.push_back(make_mp(1, 21, TerminationSet{GoalRegion{{0}, {0.0}, 1.0}},
                              classifier_at({5.0, 5.0}, 6)));
    lib.mps.push_back(make_mp(2, 22, TerminationSet{GoalRegion{{0}, {0.0}, 1.0}},
                              classifier_at({10.0, 10.0}, 7)));

    const std::vector<double> near_third = {10.02, 10.0};
    CHECK(available_options(lib, near_third) == std::vector<int>{2});
    CHECK(available_options(lib, {100.0, 100.0}).empty());
    CHECK(available_options(lib, near_third) == available_options(lib, near_third));

    // Brute-force agreement on a grid of queries.
    for (double x : {-1.0, 0.0, 2.5, 5.0, 10.0}) {
        for (double y : {0.0, 5.0, 10.0}) {
            const std::vector<double> q = {x, y};
            std::vector<int> expected;
            for (int i = 0; i < 3; ++i)
                if (lib.mps[static_cast<std::size_t>(i)].initiation->contains(q))
                    expected.push_back(i);
            CHECK(available_options(lib, q) == expected);
        }
    }
}

TEST_CASE("match returns the lowest accepting id without touching the library") {
    Library lib;
    lib.mps.push_back(make_mp(0, 30, TerminationSet{GoalRegion{{0}, {0.0}, 1.0}},
                              classifier_at({0.0, 0.0}, 8)));
    const auto before = lib.mps[0].policy.actor.w[0].a;

    int factory_calls = 0;
    const auto [id, created] = match_or_create(
        lib, {0.0, 0.0},
        [&] {
            ++factory_calls;
            return std::vector<MotionPrimitive>{};
        },
        "lane_change", 0);
    CHECK(id == 0);
    CHECK_FALSE(created);
    CHECK(factory_calls == 0);
    CHECK(lib.mps.size() == 1);
    CHECK(lib.mps[0].policy.actor.w[0].a == before);
    CHECK(lib.creation_log.empty());
}

TEST_CASE("an unrecognized state appends the factory's whole chain") {
    Library lib;
    auto clf_far = classifier_at({5.0, 5.0}, 9);
    auto clf_near = classifier_at({0.0, 0.0}, 10);

    std::vector<int> grow_events;
    const auto factory = [&] {
        std::vector<MotionPrimitive> chain;
        chain.push_back(make_mp(-1, 31, TerminationSet{GoalRegion{{0}, {9.0}, 1.0}}, clf_far));
        chain.push_back(make_mp(-1, 32, TerminationSet{clf_far}, clf_near));
        return chain;
    };

    const auto [id, created] = match_or_create(lib, {0.0, 0.0}, factory, "left_turn", 3,
                                               [&](int n) { grow_events.push_back(n); });
    CHECK(created);
    CHECK(id == 1); // the second link is the one that accepts the query
    REQUIRE(lib.mps.size() == 2);
    CHECK(lib.mps[0].id == 0);
    CHECK(lib.mps[1].id == 1);
    CHECK(lib.mps[0].metadata.subtask == "left_turn");
    CHECK(lib.mps[1].metadata.subtask == "left_turn");
    CHECK(lib.mps[0].metadata.creation_phase == 3);
    CHECK(grow_events == std::vector<int>{2});
    REQUIRE(lib.creation_log.size() == 1);
    CHECK(lib.creation_log[0].find("mp 0..1") != std::string::npos);

    // The same state now matches without growth.
    const auto again = match_or_create(lib, {0.0, 0.0}, factory, "left_turn", 4);
    CHECK(again.first == 1);
    CHECK_FALSE(again.second);
    CHECK(lib.mps.size() == 2);
    CHECK(grow_events.size() == 1);
}

TEST_CASE("creation never disturbs stored primitives") {
    Library lib;
    lib.mps.push_back(make_mp(0, 40, TerminationSet{GoalRegion{{0}, {0.0}, 1.0}},
                              classifier_at({0.0, 0.0}, 11)));
    const auto w_before = lib.mps[0].policy.actor.w;
    const auto alpha_before = lib.mps[0].initiation->alpha;

    match_or_create(
        lib, {50.0, 50.0},
        [&] {
            std::vector<MotionPrimitive> chain;
            chain.push_back(make_mp(-1, 41, TerminationSet{GoalRegion{{0}, {50.0}, 1.0}},
                                    classifier_at({50.0, 50.0}, 12)));
            return chain;
        },
        "turn_around", 1);

    REQUIRE(lib.mps.size() == 2);
    REQUIRE(lib.mps[0].policy.actor.w.size() == w_before.size());
    for (std::size_t i = 0; i < w_before.size(); ++i)
        CHECK(lib.mps[0].policy.actor.w[i].a == w_before[i].a);
    CHECK(lib.mps[0].initiation->alpha == alpha_before);
    CHECK(lib.mps[0].id == 0);
}

TEST_CASE("factory failures leave the library unchanged") {
    Library lib;
    lib.mps.push_back(make_mp(0, 50, TerminationSet{GoalRegion{{0}, {0.0}, 1.0}},
                              classifier_at({0.0, 0.0}, 13)));
    const auto before = lib.mps[0].policy.actor.w[0].a;
    bool grew = false;

    CHECK_THROWS_AS(match_or_create(
                        lib, {50.0, 50.0},
                        [&]() -> std::vector<MotionPrimitive> {
                            throw ChainIncompleteError({});
                        },
                        "left_turn", 2, [&](int) { grew = true; }),
                    ChainIncompleteError);
    CHECK(lib.mps.size() == 1);
    CHECK(lib.mps[0].policy.actor.w[0].a == before);
    CHECK(lib.creation_log.empty());
    CHECK_FALSE(grew);

    CHECK_THROWS_AS(match_or_create(
                        lib, {50.0, 50.0},
                        [] { return std::vector<MotionPrimitive>{}; }, "left_turn", 2),
                    ContractViolation);
    CHECK(lib.mps.size() == 1);
}

TEST_CASE("a saved library reloads bit-exactly") {
    const Library lib = sample_library();
    const auto dir = fresh_dir("roundtrip");
    save_library(lib, dir.string());
    const Library loaded = load_library(dir.string());

    CHECK(loaded.format_version == lib.format_version);
    CHECK(loaded.creation_log == lib.creation_log);
    REQUIRE(loaded.mps.size() == lib.mps.size());
    for (std::size_t i = 0; i < lib.mps.size(); ++i) {
        const auto& a = lib.mps[i];
        const auto& b = loaded.mps[i];
        CHECK(b.id == a.id);
        CHECK(b.metadata.creation_phase == a.metadata.creation_phase);
        CHECK(b.metadata.training_episodes == a.metadata.training_episodes);
        CHECK(b.metadata.subtask == a.metadata.subtask);
        CHECK(b.policy.actor_spec == a.policy.actor_spec);
        CHECK(b.policy.critic_spec == a.policy.critic_spec);
        CHECK(params_equal(b.policy.actor, a.policy.actor));
        CHECK(params_equal(b.policy.critic, a.policy.critic));
        REQUIRE(b.initiation != nullptr);
        CHECK(b.initiation->nu == a.initiation->nu);
        CHECK(b.initiation->sigma == a.initiation->sigma);
        CHECK(b.initiation->rho == a.initiation->rho);
        CHECK(b.initiation->feature_dims == a.initiation->feature_dims);
        CHECK(b.initiation->support == a.initiation->support);
        CHECK(b.initiation->alpha == a.initiation->alpha);
    }

    const auto* goal0 = std::get_if<GoalRegion>(&loaded.mps[0].termination.target);
    REQUIRE(goal0 != nullptr);
    CHECK(goal0->dims == std::vector<int>{0, 1});
    CHECK(goal0->center == std::vector<double>{0.1, 0.2});
    CHECK(goal0->radius == 0.3);

    // Identity adjacency survives the round trip.
    const auto* beta1 = loaded.mps[1].termination.classifier();
    REQUIRE(beta1 != nullptr);
    CHECK(beta1->get() == loaded.mps[0].initiation.get());
}

TEST_CASE("format and corruption problems are reported by file") {
    const Library lib = sample_library();

    SUBCASE("wrong manifest version") {
        const auto dir = fresh_dir("version");
        save_library(lib, dir.string());
        auto manifest = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
        manifest["format_version"] = 99;
        std::ofstream(dir / "manifest.json") << manifest.dump(2);
        CHECK_THROWS_AS(load_library(dir.string()), FormatError);
    }

    SUBCASE("truncated weight file") {
        const auto dir = fresh_dir("truncate");
        save_library(lib, dir.string());
        const auto victim = dir / "mp_000" / "actor.bin";
        fs::resize_file(victim, fs::file_size(victim) - 7);
        try {
            load_library(dir.string());
            FAIL("expected a corruption error");
        } catch (const CorruptionError& e) {
            CHECK(std::string(e.what()).find("actor.bin") != std::string::npos);
        }
    }

    SUBCASE("flipped byte in the classifier block") {
        const auto dir = fresh_dir("bitflip");
        save_library(lib, dir.string());
        const auto victim = dir / "mp_001" / "classifier.bin";
        std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(40);
        char byte;
        f.seekg(40);
        f.read(&byte, 1);
        byte = static_cast<char>(byte ^ 0x40);
        f.seekp(40);
        f.write(&byte, 1);
        f.close();
        try {
            load_library(dir.string());
            FAIL("expected a corruption error");
        } catch (const CorruptionError& e) {
            CHECK(std::string(e.what()).find("classifier.bin") != std::string::npos);
        }
    }

    SUBCASE("missing weight file") {
        const auto dir = fresh_dir("missing");
        save_library(lib, dir.string());
        fs::remove(dir / "mp_002" / "critic.bin");
        try {
            load_library(dir.string());
            FAIL("expected a corruption error");
        } catch (const CorruptionError& e) {
            CHECK(std::string(e.what()).find("critic.bin") != std::string::npos);
        }
    }

    SUBCASE("tampered id ordering") {
        const auto dir = fresh_dir("ids");
        save_library(lib, dir.string());
        auto manifest = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
        manifest["mps"][0]["id"] = 1;
        std::ofstream(dir / "manifest.json") << manifest.dump(2);
        CHECK_THROWS_AS(load_library(dir.string()), FormatError);
    }
}

TEST_CASE("the decision head persists beside the primitives") {
    Library lib = sample_library();
    DecisionConfig dcfg;
    dcfg.obs_dim = 4;
    dcfg.hidden = {8};
    DecisionAgent agent(dcfg, 17);
    agent.grow_output();
    agent.grow_output();
    agent.grow_output();
    lib.decision = agent.snapshot();

    SUBCASE("round trip restores both nets bit-exactly") {
        const auto dir = fresh_dir("decision");
        save_library(lib, dir.string());
        const Library loaded = load_library(dir.string());
        REQUIRE(loaded.decision.has_value());
        CHECK(loaded.decision->spec == lib.decision->spec);
        CHECK(params_equal(loaded.decision->online, lib.decision->online));
        CHECK(params_equal(loaded.decision->target, lib.decision->target));

        DecisionAgent revived(dcfg, 99);
        revived.restore(*loaded.decision);
        Rng rng(derive_seed(17, 8, 0));
        for (int i = 0; i < 20; ++i) {
            const std::vector<double> s{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                                        rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
            CHECK(revived.q_values(s) == agent.q_values(s));
            CHECK(revived.q_values_target(s) == agent.q_values_target(s));
        }
    }

    SUBCASE("a library without a head loads without one") {
        const Library plain = sample_library();
        const auto dir = fresh_dir("no_decision");
        save_library(plain, dir.string());
        CHECK_FALSE(load_library(dir.string()).decision.has_value());
    }

    SUBCASE("width must match the primitive count on save") {
        DecisionAgent narrow(dcfg, 18);
        narrow.grow_output();
        narrow.grow_output();
        Library bad = sample_library();
        bad.decision = narrow.snapshot();
        CHECK_THROWS_AS(save_library(bad, fresh_dir("narrow").string()), ContractViolation);
    }

    SUBCASE("width must match the primitive count on load") {
        const auto dir = fresh_dir("width");
        save_library(lib, dir.string());
        auto manifest = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
        manifest["decision"]["spec"]["layer_sizes"][2] = 2;
        std::ofstream(dir / "manifest.json") << manifest.dump(2);
        CHECK_THROWS_AS(load_library(dir.string()), FormatError);
    }

    SUBCASE("a flipped byte in the head is a corruption error") {
        const auto dir = fresh_dir("decision_flip");
        save_library(lib, dir.string());
        std::fstream f(dir / "decision.bin", std::ios::in | std::ios::out | std::ios::binary);
        char byte;
        f.seekg(24);
        f.read(&byte, 1);
        byte = static_cast<char>(byte ^ 0x10);
        f.seekp(24);
        f.write(&byte, 1);
        f.close();
        try {
            load_library(dir.string());
            FAIL("expected a corruption error");
        } catch (const CorruptionError& e) {
            CHECK(std::string(e.what()).find("decision.bin") != std::string::npos);
            CHECK(std::string(e.what()).find("checksum mismatch") != std::string::npos);
        }
    }
}

TEST_CASE("unserializable libraries are rejected before writing") {
    SUBCASE("termination classifier foreign to the library") {
        Library lib;
        auto foreign = classifier_at({9.0, 9.0}, 60);
        lib.mps.push_back(
            make_mp(0, 61, TerminationSet{foreign}, classifier_at({0.0, 0.0}, 62)));
        CHECK_THROWS_AS(save_library(lib, fresh_dir("foreign").string()), ContractViolation);
    }

    SUBCASE("ids must match positions") {
        Library lib;
        lib.mps.push_back(make_mp(5, 63, TerminationSet{GoalRegion{{0}, {0.0}, 1.0}},
                                  classifier_at({0.0, 0.0}, 64)));
        CHECK_THROWS_AS(save_library(lib, fresh_dir("badids").string()), ContractViolation);
    }
}

} // TEST_SUITE
