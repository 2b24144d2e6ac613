#include "ml/metric.hpp"

#include <cmath>

namespace ml {

DistanceMetric DistanceMetric::mahalanobis(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols() || m.rows() < 1) {
        throw ValidationError("metric: matrix must be square and non-empty");
    }
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    const double asymmetry = (m - m.transpose()).cwiseAbs().maxCoeff();
    if (asymmetry > 1e-9 * scale) {
        throw ValidationError("metric: matrix is not symmetric");
    }

    Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
    if (eig.info() != Eigen::Success) {
        throw NumericError("metric: eigendecomposition failed");
    }
    Eigen::VectorXd values = eig.eigenvalues();
    const double eig_scale = std::max(1.0, values.cwiseAbs().maxCoeff());
    if (values.minCoeff() < -1e-8 * eig_scale) {
        throw NumericError("metric: matrix has negative eigenvalues");
    }
    values = values.cwiseMax(0.0);

    DistanceMetric out;
    out.kind_ = Kind::Mahalanobis;
    out.dim_ = m.rows();
    out.m_ = eig.eigenvectors() * values.asDiagonal() *
             eig.eigenvectors().transpose();
    out.m_ = 0.5 * (out.m_ + out.m_.transpose());
    out.factor_ = values.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
    return out;
}

const Eigen::MatrixXd& DistanceMetric::matrix() const {
    if (kind_ != Kind::Mahalanobis) {
        throw ValidationError("metric: no matrix for the Euclidean metric");
    }
    return m_;
}

Eigen::MatrixXd DistanceMetric::factor(Eigen::Index d) const {
    if (kind_ == Kind::Euclidean) {
        return Eigen::MatrixXd::Identity(d, d);
    }
    if (d != dim_) {
        throw ValidationError("metric: factor requested for mismatched dimension");
    }
    return factor_;
}

double DistanceMetric::squared(const Eigen::VectorXd& x,
                               const Eigen::VectorXd& y) const {
    if (x.size() != y.size()) {
        throw ValidationError("metric: vectors differ in length");
    }
    if (kind_ == Kind::Euclidean) {
        return (x - y).squaredNorm();
    }
    if (x.size() != dim_) {
        throw ValidationError("metric: vector length does not match the matrix");
    }
    Eigen::VectorXd diff = x - y;
    double q = diff.dot(m_ * diff);
    if (q < 0.0) {
        // Roundoff floor scales with the magnitude of the quadratic form.
        const double tol = 1e-12 * std::max(1.0, diff.squaredNorm() *
                                                     m_.cwiseAbs().maxCoeff());
        if (q < -tol) {
            throw NumericError("metric: quadratic form is negative");
        }
        q = 0.0;
    }
    return q;
}

double DistanceMetric::distance(const Eigen::VectorXd& x,
                                const Eigen::VectorXd& y) const {
    return std::sqrt(squared(x, y));
}

}  // namespace ml
