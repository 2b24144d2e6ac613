#pragma once

#include <Eigen/Dense>

#include "ml/errors.hpp"

namespace ml {

/// Distance metric shared by the nearest-neighbor classifiers: plain
/// Euclidean, or the Mahalanobis form sqrt((x-y)^T M (x-y)) for a symmetric
/// PSD matrix M.
///
/// Construction validates symmetry (1e-9) and the eigenvalue floor (-1e-8),
/// then snaps any tiny negative eigenvalues to zero so that downstream
/// quadratic forms cannot go negative beyond roundoff. The factor L with
/// M = L^T L is precomputed: mapping points through L turns metric queries
/// into ordinary Euclidean ones.
class DistanceMetric {
public:
    enum class Kind { Euclidean, Mahalanobis };

    static DistanceMetric euclidean() { return DistanceMetric(); }
    static DistanceMetric mahalanobis(const Eigen::MatrixXd& m);

    Kind kind() const { return kind_; }

    /// Only valid for Mahalanobis metrics.
    const Eigen::MatrixXd& matrix() const;

    /// L such that M = L^T L; identity(d) for Euclidean.
    Eigen::MatrixXd factor(Eigen::Index d) const;

    /// Expected vector length; -1 when any dimension is accepted (Euclidean).
    Eigen::Index dim() const { return dim_; }

    double operator()(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
        return distance(x, y);
    }
    double distance(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const;
    double squared(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const;

private:
    DistanceMetric() = default;

    Kind kind_ = Kind::Euclidean;
    Eigen::Index dim_ = -1;
    Eigen::MatrixXd m_;       // cleaned PSD matrix
    Eigen::MatrixXd factor_;  // L with M = L^T L
};

inline double distance(const DistanceMetric& metric, const Eigen::VectorXd& x,
                       const Eigen::VectorXd& y) {
    return metric.distance(x, y);
}

}  // namespace ml
