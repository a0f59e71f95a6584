#pragma once
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mpdrive/ddpg.hpp"
#include "mpdrive/metrics.hpp"
#include "mpdrive/mp_library.hpp"
#include "mpdrive/rl_decision.hpp"
#include "mpdrive/sim.hpp"
#include "mpdrive/skill_chain.hpp"

namespace mpdrive {

enum class PhaseKind { constant_speed, lane_change, left_turn_oncoming, turn_around, mixed_test };

const char* phase_kind_name(PhaseKind k);
// Unknown name -> FormatError.
PhaseKind phase_kind_from_name(const std::string& name);

struct PhaseSpec {
    PhaseKind kind = PhaseKind::constant_speed;
    int epochs = 400;
    // Per-subtask appearance probability; only mixed_test phases use it.
    double presence_probability = 0.5;

    void validate() const;
};

// Full experiment description. The default schedule is the four offline
// phases at 400 epochs each followed by a 1000-epoch mixed test; `scale`
// multiplies every phase budget (rounded per phase, minimum one episode)
// so desk-scale runs keep the same shape.
struct RunConfig {
    ScenarioConfig scenario;
    std::vector<PhaseSpec> phases;
    std::vector<std::uint64_t> seeds{1};
    DdpgConfig execution;   // per-primitive policy layer
    DecisionConfig decision; // option-value layer
    ChainParams chain;       // discovery settings; policy is taken from `execution`
    std::string out_dir = "runs/out";
    double scale = 0.1;
    int success_window = 200;
    bool train_decision_during_test = true;
    // Decision-layer training episodes after the offline phases (scaled like
    // a phase, never logged).
    int consolidation_episodes = 100;

    RunConfig();
    void validate() const;
};

// Defaults first, then overrides for every present key; unknown top-level
// keys -> FormatError. The inverse emits every field.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);

// max(1, llround(epochs * scale)).
int scaled_epochs(int epochs, double scale);

// The scenario restricted to exactly the vehicles this phase uses: offline
// subtask phases force their one vehicle present, constant_speed empties the
// road, mixed_test enables all three at the phase's presence probability.
ScenarioConfig scenario_for_phase(const ScenarioConfig& base, const PhaseSpec& phase);

struct RunResult {
    Library library;
    std::vector<EpisodeLog> logs;
    // Output-head growths performed, one per primitive the run created.
    int decision_grow_count = 0;
};

// The offline curriculum over cfg's non-test phases, in order: each phase
// probes the library with its scenario's canonical start; a miss builds a
// backward chain (training episodes are logged as they run), and the
// library's decision head grows one row per appended primitive. Leftover
// phase budget is spent on logged greedy evaluation episodes. Ends with the
// unlogged consolidation pass, then persists library/, episodes.csv, and
// config.json under cfg.out_dir. A chain that cannot cover the start saves
// the partial artifacts and rethrows ChainIncompleteError.
RunResult run_offline(const RunConfig& cfg, std::uint64_t seed);

// Runs cfg's mixed_test phases against a finished library: the decision
// layer picks among the initiation-matched options each decision point,
// optionally continuing to train (the library itself is never mutated).
// When no stored option accepts the state, the full option set is offered;
// fallback_count (when given) receives the number of such decisions.
std::vector<EpisodeLog> run_test(const RunConfig& cfg, const Library& lib, std::uint64_t seed,
                                 int* fallback_count = nullptr);

enum class BaselineAlgo { flat_ddpg, tabular_q };

// One flat agent trained through every phase of the schedule, test included:
// flat_ddpg is a single actor-critic on the raw action channel; tabular_q
// discretizes relative pose and host speed over five throttle levels.
std::vector<EpisodeLog> run_baseline(const RunConfig& cfg, BaselineAlgo algo, std::uint64_t seed);

struct ReportOptions {
    double ema_weight = 0.95;
    int window = 200; // clamped to the shortest method's test-episode count
    bool svg = false;
};

// Reads <dir>/episodes.csv for each labeled run and writes per-label
// <label>_learning_curve.csv (epoch, raw return, EMA), one success_table.csv
// (three subtasks + goal as rows, methods as columns, absent subtasks "na"),
// and optionally curves.svg. Output depends only on the inputs.
void write_report(const std::vector<std::pair<std::string, std::string>>& runs,
                  const std::string& out_dir, const ReportOptions& opt);

// Deterministic toy-environment checks, each (name, passed).
std::vector<std::pair<std::string, bool>> verify_toys();

} // namespace mpdrive
