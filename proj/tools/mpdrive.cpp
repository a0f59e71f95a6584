#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mpdrive/errors.hpp"
#include "mpdrive/harness.hpp"

namespace fs = std::filesystem;
using namespace mpdrive;

namespace {

RunConfig load_config(const std::string& path) {
    if (path.empty()) return RunConfig{};
    std::ifstream f(path);
    if (!f) throw CorruptionError(path + ": cannot open");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
    return run_config_from_json(j);
}

// Derives a label for a run directory from its trailing path component.
std::string label_of(const std::string& dir) {
    std::string name = fs::path(dir).filename().string();
    return name.empty() ? fs::path(dir).parent_path().filename().string() : name;
}

int cmd_train(const std::string& config_path, std::uint64_t seed, double scale,
              const std::string& out) {
    RunConfig cfg = load_config(config_path);
    if (scale > 0.0) cfg.scale = scale;
    if (!out.empty()) cfg.out_dir = out;
    RunResult result = run_offline(cfg, seed);
    std::cout << "library: " << result.library.mps.size() << " primitives, "
              << result.decision_grow_count << " decision-head growths\n"
              << "logged episodes: " << result.logs.size() << '\n'
              << "artifacts: " << cfg.out_dir << '\n';
    return 0;
}

int cmd_test(const std::string& library_dir, const std::string& config_path, int episodes,
             const std::string& out) {
    RunConfig cfg = load_config(config_path);
    if (!out.empty()) cfg.out_dir = out;
    if (episodes > 0) {
        // Explicit episode count overrides every mixed phase, run at scale 1
        // so the count is literal.
        for (PhaseSpec& p : cfg.phases)
            if (p.kind == PhaseKind::mixed_test) p.epochs = episodes;
        cfg.scale = 1.0;
    }
    Library lib = load_library(library_dir);
    int fallbacks = 0;
    std::vector<EpisodeLog> logs = run_test(cfg, lib, cfg.seeds.front(), &fallbacks);
    fs::create_directories(cfg.out_dir);
    write_episode_csv((fs::path(cfg.out_dir) / "episodes.csv").string(), logs);
    SuccessTable table = success_rates(
        logs, std::min<int>(cfg.success_window, static_cast<int>(logs.size())));
    std::cout << "episodes: " << logs.size() << ", fallback decisions: " << fallbacks << '\n';
    const char* names[] = {"lane_change", "left_turn_oncoming", "turn_around"};
    for (std::size_t k = 0; k < 3; ++k)
        std::cout << names[k] << ": "
                  << (table.subtask[k] ? std::to_string(*table.subtask[k]) : "na") << '\n';
    std::cout << "goal: " << table.goal_rate << '\n';
    return 0;
}

int cmd_baseline(const std::string& algo, const std::string& config_path, std::uint64_t seed,
                 const std::string& out) {
    RunConfig cfg = load_config(config_path);
    if (!out.empty()) cfg.out_dir = out;
    BaselineAlgo a;
    if (algo == "flat_ddpg")
        a = BaselineAlgo::flat_ddpg;
    else if (algo == "tabular_q")
        a = BaselineAlgo::tabular_q;
    else
        throw ContractViolation("unknown baseline algo: " + algo);
    std::vector<EpisodeLog> logs = run_baseline(cfg, a, seed);
    fs::create_directories(cfg.out_dir);
    write_episode_csv((fs::path(cfg.out_dir) / "episodes.csv").string(), logs);
    std::cout << "episodes: " << logs.size() << ", artifacts: " << cfg.out_dir << '\n';
    return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, double ema_weight, int window, bool svg,
               const std::string& out) {
    std::vector<std::pair<std::string, std::string>> runs;
    for (const std::string& dir : run_dirs) runs.emplace_back(label_of(dir), dir);
    ReportOptions opt;
    opt.ema_weight = ema_weight;
    opt.window = window;
    opt.svg = svg;
    write_report(runs, out, opt);
    std::cout << "report: " << out << '\n';
    return 0;
}

int cmd_verify() {
    bool all = true;
    for (const auto& [name, passed] : verify_toys()) {
        std::cout << (passed ? "[PASS] " : "[FAIL] ") << name << '\n';
        all = all && passed;
    }
    return all ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"motion-primitive intersection driving experiments"};
    app.require_subcommand(1);

    std::string config_path, out, library_dir, algo = "flat_ddpg";
    std::uint64_t seed = 1;
    double scale = 0.0, ema_weight = 0.95;
    int episodes = 0, window = 200;
    bool svg = false;
    std::vector<std::string> run_dirs;

    CLI::App* train = app.add_subcommand("train", "offline curriculum: discover and train MPs");
    train->add_option("--config", config_path, "run config json");
    train->add_option("--seed", seed, "run seed");
    train->add_option("--scale", scale, "epoch multiplier in (0, 1]");
    train->add_option("--out", out, "output directory");

    CLI::App* test = app.add_subcommand("test", "mixed-traffic evaluation of a saved library");
    test->add_option("--library", library_dir, "library directory")->required();
    test->add_option("--config", config_path, "run config json");
    test->add_option("--episodes", episodes, "mixed-test episode count override");
    test->add_option("--out", out, "output directory");

    CLI::App* baseline = app.add_subcommand("baseline", "flat agent through the same schedule");
    baseline->add_option("--algo", algo, "flat_ddpg or tabular_q");
    baseline->add_option("--config", config_path, "run config json");
    baseline->add_option("--seed", seed, "run seed");
    baseline->add_option("--out", out, "output directory");

    CLI::App* report = app.add_subcommand("report", "learning curves and the success table");
    report->add_option("--runs", run_dirs, "run directories")->required()->expected(-1);
    report->add_option("--ema", ema_weight, "EMA weight in [0, 1)");
    report->add_option("--window", window, "success window");
    report->add_flag("--svg", svg, "also draw curves.svg");
    report->add_option("--out", out, "output directory")->required();

    CLI::App* verify = app.add_subcommand("verify", "deterministic toy-environment checks");
    (void)verify;

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(config_path, seed, scale, out);
        if (test->parsed()) return cmd_test(library_dir, config_path, episodes, out);
        if (baseline->parsed()) return cmd_baseline(algo, config_path, seed, out);
        if (report->parsed()) return cmd_report(run_dirs, ema_weight, window, svg, out);
        return cmd_verify();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
