#pragma once

#include <Eigen/Dense>
#include <vector>

#include "ml/dataset.hpp"
#include "ml/metric.hpp"

namespace ml::enn {

/// Per-class coherence statistics of a training set: t[i] is the fraction of
/// the k neighbor slots of class-i points occupied by same-class points
/// (0 <= t[i] <= 1). The ranked neighbor table is kept so that incremental
/// prediction can detect which lists a test point would enter. Points are
/// never their own neighbors.
struct ClasswiseStats {
    Eigen::VectorXd t;
    std::vector<int> class_counts;
    std::vector<int> labels;  // training labels, one per point
    int k = 1;
    // n x k, row j = ranked neighbors of training point j (ties by lower
    // index), with the matching metric distances.
    std::vector<std::vector<int>> neighbor_indices;
    std::vector<std::vector<double>> neighbor_distances;

    int num_classes() const { return static_cast<int>(class_counts.size()); }
    double kth_distance(int point) const {
        return neighbor_distances[point][k - 1];
    }
};

/// 1 iff the r-th nearest neighbor (1-based, self excluded) of training point
/// x_index shares its class. Throws ValidationError when r exceeds the number
/// of other points.
int indicator(const Dataset& universe, const DistanceMetric& metric,
              int x_index, int r);

/// Builds the full statistics for neighbor count k (requires k <= n-1).
ClasswiseStats classwise_statistics(const Dataset& train, int k,
                                    const DistanceMetric& metric);

/// Restricts precomputed statistics to a smaller neighbor count. Lets a grid
/// over k reuse one neighbor table.
ClasswiseStats truncate(const ClasswiseStats& stats, int k);

/// Bookkeeping for the incremental decision rule: k_i counts the test
/// point's nearest training neighbors per class; delta_n[i][j] counts the
/// class-i training points whose same-class neighbor tally changes when the
/// test point is inserted under hypothesis class j.
struct EnnDeltas {
    std::vector<int> k_i;
    std::vector<std::vector<int>> delta_n;  // N x N
};

EnnDeltas compute_deltas(const ClasswiseStats& stats, const Dataset& train,
                         const DistanceMetric& metric,
                         const Eigen::VectorXd& z);

struct EnnDecision {
    int label = 0;
    // Total coherence of the augmented set per hypothesis class. Both
    // decision routes produce this same quantity.
    Eigen::VectorXd score;
};

/// Classifies z by rebuilding the class-wise statistics over the augmented
/// set S u {z} for every hypothesis label and maximizing total coherence.
/// Ties break toward the lower class index. O(n^2) per query; the reference
/// route for conformance checks.
EnnDecision predict_direct(const Dataset& train, int k,
                           const DistanceMetric& metric,
                           const Eigen::VectorXd& z);

/// Same decision computed from cached statistics and neighbor displacement
/// counts, without rebuilding the table. Must agree with predict_direct on
/// every input.
EnnDecision predict_incremental(const ClasswiseStats& stats,
                                const Dataset& train,
                                const DistanceMetric& metric,
                                const Eigen::VectorXd& z);

/// Convenience wrapper holding the fitted statistics plus what prediction
/// needs. Immutable after construction; concurrent predict calls are safe.
class EnnClassifier {
public:
    EnnClassifier(const Dataset& train, int k,
                  DistanceMetric metric = DistanceMetric::euclidean());

    const ClasswiseStats& stats() const { return stats_; }
    int predict(const Eigen::VectorXd& z) const;
    std::vector<int> predict_batch(const Eigen::MatrixXd& queries) const;

private:
    Dataset train_;
    DistanceMetric metric_;
    ClasswiseStats stats_;
};

}  // namespace ml::enn
