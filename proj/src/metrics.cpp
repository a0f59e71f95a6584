#include "mpdrive/metrics.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mpdrive/errors.hpp"

namespace mpdrive {

const char* const kEpisodeCsvHeader =
    "phase,epoch,steps,return,r_vel,r_living,r_col,r_goal,"
    "success_lane_change,success_left_turn,success_turn_around,"
    "goal,collision,seed";

namespace {

constexpr std::size_t kFieldCount = 14;

std::string format_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

[[noreturn]] void bad_line(const std::string& path, std::size_t line, const std::string& why) {
    throw FormatError(path + ":" + std::to_string(line) + ": " + why);
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

double parse_real(const std::string& s, const std::string& path, std::size_t line) {
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || s.empty() || errno == ERANGE)
        bad_line(path, line, "bad real '" + s + "'");
    return v;
}

long long parse_int(const std::string& s, const std::string& path, std::size_t line) {
    errno = 0;
    char* end = nullptr;
    long long v = std::strtoll(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size() || s.empty() || errno == ERANGE)
        bad_line(path, line, "bad integer '" + s + "'");
    return v;
}

std::uint64_t parse_u64(const std::string& s, const std::string& path, std::size_t line) {
    errno = 0;
    char* end = nullptr;
    unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size() || s.empty() || s[0] == '-' || errno == ERANGE)
        bad_line(path, line, "bad seed '" + s + "'");
    return v;
}

int parse_flag(const std::string& s, const std::string& path, std::size_t line) {
    long long v = parse_int(s, path, line);
    if (v != 0 && v != 1) bad_line(path, line, "flag outside {0,1}: '" + s + "'");
    return static_cast<int>(v);
}

int parse_success(const std::string& s, const std::string& path, std::size_t line) {
    long long v = parse_int(s, path, line);
    if (v < -1 || v > 1) bad_line(path, line, "success outside {-1,0,1}: '" + s + "'");
    return static_cast<int>(v);
}

} // namespace

void write_episode_csv(const std::string& path, const std::vector<EpisodeLog>& logs) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw CorruptionError(path + ": cannot open for writing");
    f << kEpisodeCsvHeader << '\n';
    for (const EpisodeLog& e : logs) {
        if (e.phase.find(',') != std::string::npos || e.phase.find('\n') != std::string::npos)
            throw ContractViolation("phase name must not contain ',' or newline: " + e.phase);
        f << e.phase << ',' << e.epoch << ',' << e.steps << ','
          << format_real(e.undiscounted_return) << ',' << format_real(e.r_vel) << ','
          << format_real(e.r_living) << ',' << format_real(e.r_col) << ','
          << format_real(e.r_goal) << ',' << e.success[0] << ',' << e.success[1] << ','
          << e.success[2] << ',' << (e.goal ? 1 : 0) << ',' << (e.collision ? 1 : 0) << ','
          << e.seed << '\n';
    }
    if (!f) throw CorruptionError(path + ": write failed");
}

std::vector<EpisodeLog> read_episode_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw CorruptionError(path + ": cannot open");
    std::string line;
    if (!std::getline(f, line)) throw FormatError(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kEpisodeCsvHeader) throw FormatError(path + ":1: unexpected header");
    std::vector<EpisodeLog> out;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields = split_fields(line);
        if (fields.size() != kFieldCount)
            bad_line(path, lineno,
                     "expected " + std::to_string(kFieldCount) + " fields, got " +
                         std::to_string(fields.size()));
        EpisodeLog e;
        e.phase = fields[0];
        e.epoch = static_cast<int>(parse_int(fields[1], path, lineno));
        e.steps = static_cast<int>(parse_int(fields[2], path, lineno));
        e.undiscounted_return = parse_real(fields[3], path, lineno);
        e.r_vel = parse_real(fields[4], path, lineno);
        e.r_living = parse_real(fields[5], path, lineno);
        e.r_col = parse_real(fields[6], path, lineno);
        e.r_goal = parse_real(fields[7], path, lineno);
        for (int i = 0; i < 3; ++i)
            e.success[static_cast<std::size_t>(i)] =
                parse_success(fields[8 + static_cast<std::size_t>(i)], path, lineno);
        e.goal = parse_flag(fields[11], path, lineno) == 1;
        e.collision = parse_flag(fields[12], path, lineno) == 1;
        e.seed = parse_u64(fields[13], path, lineno);
        out.push_back(std::move(e));
    }
    if (f.bad()) throw CorruptionError(path + ": read failed");
    return out;
}

std::vector<double> ema(const std::vector<double>& xs, double w) {
    if (!(w >= 0.0 && w < 1.0)) throw ContractViolation("ema: weight outside [0, 1)");
    std::vector<double> ys;
    ys.reserve(xs.size());
    double y = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        y = (i == 0) ? xs[0] : w * y + (1.0 - w) * xs[i];
        ys.push_back(y);
    }
    return ys;
}

SuccessTable success_rates(const std::vector<EpisodeLog>& logs, int window) {
    if (window < 1 || static_cast<std::size_t>(window) > logs.size())
        throw ContractViolation("success_rates: window outside [1, logs.size()]");
    SuccessTable table;
    table.window = window;
    std::array<int, 3> present{};
    std::array<int, 3> passed{};
    int goals = 0;
    for (std::size_t i = logs.size() - static_cast<std::size_t>(window); i < logs.size(); ++i) {
        const EpisodeLog& e = logs[i];
        for (std::size_t k = 0; k < 3; ++k) {
            if (e.success[k] < 0) continue;
            present[k] += 1;
            passed[k] += e.success[k];
        }
        if (e.goal) goals += 1;
    }
    for (std::size_t k = 0; k < 3; ++k)
        if (present[k] > 0) table.subtask[k] = static_cast<double>(passed[k]) / present[k];
    table.goal_rate = static_cast<double>(goals) / window;
    return table;
}

} // namespace mpdrive
