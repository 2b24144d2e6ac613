#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "ml/dataset.hpp"
#include "ml/metric.hpp"

namespace ml {

/// The k nearest training points of a query, distances sorted ascending.
/// Ties at any rank are broken toward the lower training index.
struct NeighborList {
    std::vector<int> indices;
    std::vector<double> distances;
};

/// Exhaustive k-nearest-neighbor model. Training points are stored in the
/// metric's factor space so that Mahalanobis queries cost the same as
/// Euclidean ones. Immutable after construction; concurrent queries are safe.
class KnnModel {
public:
    KnnModel(const Dataset& train, int k,
             DistanceMetric metric = DistanceMetric::euclidean());

    int k() const { return k_; }
    int num_classes() const { return num_classes_; }
    Eigen::Index train_size() const { return points_.rows(); }
    Eigen::Index dims() const { return points_.cols(); }
    const std::vector<int>& labels() const { return labels_; }
    const DistanceMetric& metric() const { return metric_; }

    /// Points mapped through the metric factor (Euclidean space).
    const Eigen::MatrixXd& transformed_points() const { return points_; }
    Eigen::VectorXd transform(const Eigen::VectorXd& x) const;

    /// Non-fatal advice: even k invites voting ties.
    static std::optional<std::string> check_k(int k, Eigen::Index n_train);

private:
    Eigen::MatrixXd points_;
    std::vector<int> labels_;
    int num_classes_ = 0;
    int k_ = 1;
    DistanceMetric metric_;
};

/// The k training points nearest to x over the whole training set.
NeighborList knn_search(const KnnModel& model, const Eigen::VectorXd& x);

struct KnnPrediction {
    int label = 0;
    Eigen::VectorXd posterior;  // per-class neighbor fractions, sums to 1
};

/// Majority vote over the query's k nearest neighbors. Vote ties go to the
/// class whose nearest member of the neighbor set is closest, then to the
/// lower class index.
KnnPrediction knn_predict(const KnnModel& model, const Eigen::VectorXd& x);

std::vector<int> knn_predict_batch(const KnnModel& model,
                                   const Eigen::MatrixXd& queries);

}  // namespace ml
