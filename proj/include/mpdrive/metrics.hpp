#pragma once
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mpdrive {

// One logged episode. Subtask success flags use a three-way encoding:
// -1 the subtask's vehicle never appeared, 0 it appeared and the host
// failed the subtask, 1 it appeared and the host passed it.
struct EpisodeLog {
    std::string phase;
    int epoch = 0;
    int steps = 0;
    double undiscounted_return = 0.0;
    // Per-component reward sums over the episode.
    double r_vel = 0.0, r_living = 0.0, r_col = 0.0, r_goal = 0.0;
    std::array<int, 3> success{-1, -1, -1}; // lane change, left turn, turn around
    bool goal = false;
    bool collision = false;
    // Informational only; never serialized, so logs stay reproducible.
    double wall_time = 0.0;
    std::uint64_t seed = 0;
};

// Pinned episodes.csv header; readers reject any other first line.
extern const char* const kEpisodeCsvHeader;

// Writes logs under the pinned header, reals at full round-trip precision.
void write_episode_csv(const std::string& path, const std::vector<EpisodeLog>& logs);

// Parses a file written by write_episode_csv. Wrong header, wrong field
// count, or an unparsable field throws FormatError naming the line.
std::vector<EpisodeLog> read_episode_csv(const std::string& path);

// Exponential moving average: y0 = x0, y_t = w*y_{t-1} + (1-w)*x_t.
// Empty input gives empty output. w outside [0, 1) -> ContractViolation.
std::vector<double> ema(const std::vector<double>& xs, double w);

// Success rates over the final `window` episodes. A subtask's rate is
// successes / episodes-where-present; a subtask never present in the
// window has no rate at all (nullopt), never 0/0.
struct SuccessTable {
    int window = 0;
    std::array<std::optional<double>, 3> subtask{};
    double goal_rate = 0.0;
};

// window must be in [1, logs.size()] -> ContractViolation otherwise.
SuccessTable success_rates(const std::vector<EpisodeLog>& logs, int window);

} // namespace mpdrive
