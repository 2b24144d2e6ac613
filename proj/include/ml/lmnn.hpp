#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "ml/dataset.hpp"
#include "ml/metric.hpp"

namespace ml::lmnn {

/// Fixed table of same-class anchors-to-target assignments: row i lists the
/// k_t same-class points the optimization pulls anchor i toward. Selected
/// once under the Euclidean metric and never re-selected.
struct TargetNeighborMap {
    std::vector<std::vector<int>> targets;  // n rows, k_t entries each
    int k_t = 0;
};

/// The k_t Euclidean-nearest same-class neighbors of every anchor. Requires
/// every class to have more than k_t members.
TargetNeighborMap select_target_neighbors(const Dataset& train, int k_t);

struct LmnnConfig {
    int k_t = 3;           // clamped to smallest class - 1 by fit()
    double mu = 0.5;       // push weight in (0, 1)
    double step = 0.0;     // 0 -> auto-scale so the first step moves ~1e-3
    int max_iter = 200;
    double tol = 1e-5;     // relative loss change
};

/// Learned Mahalanobis metric plus the training snapshot needed to apply it.
struct MetricModel {
    Eigen::MatrixXd m;            // d x d symmetric PSD
    double mu = 0.5;
    std::vector<double> history;  // accepted losses, non-increasing
    TargetNeighborMap targets;
    Eigen::MatrixXd train_points;
    std::vector<int> train_labels;
    bool converged = false;
    int iterations = 0;

    /// L with M = L^T L (eigenvalue square root).
    Eigen::MatrixXd factor() const;
};

/// (x - y)^T M (x - y).
double squared_distance(const MetricModel& model, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& y);

/// A margin violation: differently-labeled point l lies within one unit of
/// anchor i's distance to its target j.
struct ImposterTriple {
    int anchor = 0;
    int target = 0;
    int imposter = 0;
};

struct LossInfo {
    double loss = 0.0;
    double pull = 0.0;  // (1-mu) * sum of target distances
    double push = 0.0;  // mu * sum of hinge values
    Eigen::MatrixXd grad;
    std::size_t active_count = 0;
    std::vector<ImposterTriple> active;  // filled when requested
};

/// Hinge-loss objective and subgradient at the model's current matrix:
///   loss = (1-mu) sum_target D(i,j)
///        + mu sum_active [1 + D(i,j) - D(i,l)]_+
///   grad = (1-mu) sum C_ij + mu sum_active (C_ij - C_il),
/// with C_ab the outer product of (x_a - x_b). A triple is active when
/// D(i,l) <= D(i,j) + 1; the per-anchor pruning radius cannot drop one.
LossInfo loss_and_subgradient(const MetricModel& model, const Dataset& train,
                              const TargetNeighborMap& targets,
                              bool collect_triples = true);

/// Frobenius-nearest PSD matrix: eigendecompose and clamp negative
/// eigenvalues to zero. Input must be symmetric within 1e-9.
Eigen::MatrixXd project_psd(const Eigen::MatrixXd& a);

/// Projected sub-gradient descent from the identity matrix with an adaptive
/// step (halved when a candidate raises the loss, grown 1.1x on acceptance).
/// Accepted losses are non-increasing; the matrix stays PSD after every
/// step.
MetricModel fit(const Dataset& train, const LmnnConfig& config = {});

/// The learned metric, ready for KnnModel / EnnClassifier.
DistanceMetric export_metric(const MetricModel& model);

void save_metric_csv(const std::string& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd load_metric_csv(const std::string& path);

}  // namespace ml::lmnn
