#include "mpdrive/option_sets.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "mpdrive/errors.hpp"

namespace mpdrive {
namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double gauss_kernel(const std::vector<double>& a, const std::vector<double>& b, double sigma) {
    return std::exp(-sq_dist(a, b) / (2.0 * sigma * sigma));
}

// Euclidean projection onto {0 <= x_i <= cap, sum x = 1}. The shifted-clamp
// mass sum(clamp(v_i - lambda, 0, cap)) is monotone in lambda, so bisect.
// Requires n * cap >= 1 or the set is empty.
std::vector<double> project_capped_simplex(const std::vector<double>& v, double cap) {
    double lo = v[0], hi = v[0];
    for (double x : v) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    lo -= cap + 1.0; // mass = n * cap >= 1 here
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        double mass = 0.0;
        for (double x : v) mass += std::clamp(x - mid, 0.0, cap);
        if (mass > 1.0)
            lo = mid;
        else
            hi = mid;
    }
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::clamp(v[i] - hi, 0.0, cap);
    return out;
}

} // namespace

void GoalRegion::validate() const {
    if (dims.empty()) throw ContractViolation("goal region needs at least one dimension");
    if (dims.size() != center.size())
        throw ContractViolation("goal region dims and center length mismatch");
    if (!(radius > 0.0)) throw ContractViolation("goal region radius must be positive");
    for (int d : dims)
        if (d < 0) throw ContractViolation("goal region dimension index negative");
}

bool GoalRegion::contains(const std::vector<double>& obs) const {
    double s = 0.0;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        const auto d = static_cast<std::size_t>(dims[i]);
        if (d >= obs.size()) throw ContractViolation("goal region dimension out of range");
        const double diff = obs[d] - center[i];
        s += diff * diff;
    }
    return s <= radius * radius;
}

std::vector<double> InitiationClassifier::slice(const std::vector<double>& obs) const {
    if (feature_dims.empty()) return obs;
    std::vector<double> out;
    out.reserve(feature_dims.size());
    for (int d : feature_dims) {
        const auto i = static_cast<std::size_t>(d);
        if (d < 0 || i >= obs.size())
            throw ContractViolation("classifier feature dimension out of range");
        out.push_back(obs[i]);
    }
    return out;
}

double InitiationClassifier::score(const std::vector<double>& obs) const {
    if (support.empty()) throw ContractViolation("classifier has no support points");
    const std::vector<double> x = slice(obs);
    if (x.size() != support[0].size())
        throw ContractViolation("classifier feature width mismatch");
    double h = 0.0;
    for (std::size_t i = 0; i < support.size(); ++i)
        h += alpha[i] * gauss_kernel(support[i], x, sigma);
    return h - rho;
}

void InitiationFitConfig::validate() const {
    if (!(nu > 0.0 && nu <= 1.0)) throw ContractViolation("nu must lie in (0, 1]");
    if (pgd_iterations < 1) throw ContractViolation("pgd_iterations must be positive");
    if (!(sigma_floor > 0.0)) throw ContractViolation("sigma_floor must be positive");
}

InitiationClassifier fit_initiation(const std::vector<std::vector<double>>& positive_obs,
                                    const std::vector<int>& feature_dims,
                                    const InitiationFitConfig& cfg) {
    cfg.validate();
    if (positive_obs.size() < 5)
        throw InsufficientPositives("need at least 5 positive samples, got " +
                                    std::to_string(positive_obs.size()));

    InitiationClassifier clf;
    clf.feature_dims = feature_dims;
    clf.nu = cfg.nu;
    clf.support.reserve(positive_obs.size());
    for (const auto& obs : positive_obs) clf.support.push_back(clf.slice(obs));
    const std::size_t n = clf.support.size();
    for (const auto& row : clf.support)
        if (row.size() != clf.support[0].size())
            throw ContractViolation("positive samples differ in width");

    // Kernel width: median pairwise distance, floored so identical positives
    // still give a finite-width kernel.
    std::vector<double> dists;
    dists.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            dists.push_back(std::sqrt(sq_dist(clf.support[i], clf.support[j])));
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2),
                     dists.end());
    clf.sigma = std::max(dists[dists.size() / 2], cfg.sigma_floor);

    std::vector<std::vector<double>> kmat(n, std::vector<double>(n));
    double max_row_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row_sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            kmat[i][j] = gauss_kernel(clf.support[i], clf.support[j], clf.sigma);
            row_sum += kmat[i][j];
        }
        max_row_sum = std::max(max_row_sum, row_sum);
    }

    // Projected gradient descent on 0.5 a^T K a; the row-sum bound dominates
    // the spectral norm of K, so this step is always stable.
    const double cap = 1.0 / (cfg.nu * static_cast<double>(n));
    const double step = 1.0 / (static_cast<double>(n) * max_row_sum);
    std::vector<double> a(n, 1.0 / static_cast<double>(n));
    std::vector<double> grad(n);
    for (int it = 0; it < cfg.pgd_iterations; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double g = 0.0;
            for (std::size_t j = 0; j < n; ++j) g += kmat[i][j] * a[j];
            grad[i] = g;
        }
        for (std::size_t i = 0; i < n; ++i) a[i] -= step * grad[i];
        a = project_capped_simplex(a, cap);
    }
    clf.alpha = a;

    // Threshold at the floor(nu N)-th smallest self-score: at most that many
    // training points fall below it, so at least ceil((1 - nu) N) are kept.
    std::vector<double> h(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) h[i] += a[j] * kmat[i][j];
    std::vector<double> sorted = h;
    std::sort(sorted.begin(), sorted.end());
    const auto m = static_cast<std::size_t>(cfg.nu * static_cast<double>(n));
    clf.rho = sorted[m == 0 ? 0 : m - 1];
    return clf;
}

bool TerminationSet::contains(const std::vector<double>& obs) const {
    if (const auto* goal = std::get_if<GoalRegion>(&target)) return goal->contains(obs);
    const auto& clf = std::get<std::shared_ptr<const InitiationClassifier>>(target);
    if (!clf) throw ContractViolation("termination classifier is null");
    return clf->contains(obs);
}

} // namespace mpdrive
