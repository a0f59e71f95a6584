#pragma once
#include <memory>
#include <variant>
#include <vector>

namespace mpdrive {

// Ball in a subspace of the observation vector.
struct GoalRegion {
    std::vector<int> dims;      // observation components that define the region
    std::vector<double> center; // one entry per listed dim
    double radius = 0.0;

    void validate() const;
    bool contains(const std::vector<double>& obs) const; // boundary included
};

// One-class kernel classifier over a slice of the observation: accepts
// states that look like its training positives. score(s) >= 0 means inside.
struct InitiationClassifier {
    std::vector<int> feature_dims; // empty = use the full observation
    double sigma = 1.0;            // gaussian kernel width
    double rho = 0.0;              // acceptance threshold
    double nu = 0.1;               // targeted rejection fraction
    std::vector<std::vector<double>> support; // training features
    std::vector<double> alpha;                // dual weights, one per support row

    std::vector<double> slice(const std::vector<double>& obs) const;
    double score(const std::vector<double>& obs) const;
    bool contains(const std::vector<double>& obs) const { return score(obs) >= 0.0; }
};

struct InitiationFitConfig {
    double nu = 0.1;
    int pgd_iterations = 500;
    double sigma_floor = 1e-6;

    void validate() const;
};

// Fits the classifier to positive observations only: kernel width from the
// median pairwise distance, dual weights by projected gradient descent on
// 0.5 a^T K a over {0 <= a <= 1/(nu N), sum a = 1}, and the threshold as the
// floor(nu N)-th smallest self-score so at least a (1 - nu) fraction of the
// training set is accepted. Throws InsufficientPositives below 5 samples.
InitiationClassifier fit_initiation(const std::vector<std::vector<double>>& positive_obs,
                                    const std::vector<int>& feature_dims = {},
                                    const InitiationFitConfig& cfg = {});

// Where an option stops: the task goal region, or the initiation set of the
// next skill toward the goal. Chains share the classifier by pointer, so
// adjacency is identity, not a copy.
struct TerminationSet {
    std::variant<GoalRegion, std::shared_ptr<const InitiationClassifier>> target;

    bool contains(const std::vector<double>& obs) const;
    bool is_goal() const { return std::holds_alternative<GoalRegion>(target); }
    const std::shared_ptr<const InitiationClassifier>* classifier() const {
        return std::get_if<std::shared_ptr<const InitiationClassifier>>(&target);
    }
};

} // namespace mpdrive
