#include "ml/enn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ml::enn {

namespace {

// Rows mapped through the metric factor one at a time. Keeping the per-row
// arithmetic independent of the matrix height makes distances bitwise equal
// between the cached tables and the rebuilt-from-scratch route.
Eigen::MatrixXd to_factor_space(const Eigen::MatrixXd& x,
                                const DistanceMetric& metric) {
    if (metric.kind() == DistanceMetric::Kind::Euclidean) return x;
    Eigen::MatrixXd l = metric.factor(x.cols());
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        out.row(r) = (l * x.row(r).transpose()).transpose();
    }
    return out;
}

// Metric distances from q to every row. Ranking happens on these reported
// values (not the squared forms): sqrt can collapse one-ulp gaps, and both
// decision routes must rank by the same keys.
Eigen::VectorXd distances_to_all(const Eigen::MatrixXd& points,
                                 const Eigen::VectorXd& q) {
    return (points.rowwise() - q.transpose())
        .rowwise()
        .squaredNorm()
        .cwiseMax(0.0)
        .cwiseSqrt();
}

// Positions of the k smallest entries, ties toward the lower index.
std::vector<int> smallest_k(const Eigen::VectorXd& dist, int k) {
    std::vector<int> order(dist.size());
    std::iota(order.begin(), order.end(), 0);
    auto closer = [&dist](int a, int b) {
        if (dist(a) != dist(b)) return dist(a) < dist(b);
        return a < b;
    };
    std::nth_element(order.begin(), order.begin() + (k - 1), order.end(), closer);
    std::sort(order.begin(), order.begin() + k, closer);
    order.resize(k);
    return order;
}

// Same-class slot counts per class over the first k neighbor slots.
std::vector<long> coherence_counts(const ClasswiseStats& stats, int k) {
    std::vector<long> counts(stats.class_counts.size(), 0);
    for (std::size_t j = 0; j < stats.neighbor_indices.size(); ++j) {
        int own = stats.labels[j];
        const auto& ranked = stats.neighbor_indices[j];
        for (int r = 0; r < k; ++r) {
            if (stats.labels[ranked[r]] == own) ++counts[own];
        }
    }
    return counts;
}

}  // namespace

int indicator(const Dataset& universe, const DistanceMetric& metric,
              int x_index, int r) {
    universe.validate();
    const int n = static_cast<int>(universe.rows());
    if (x_index < 0 || x_index >= n) {
        throw ValidationError("enn: point index out of range");
    }
    if (r < 1 || r > n - 1) {
        throw ValidationError("enn: neighbor rank " + std::to_string(r) +
                              " out of range for " + std::to_string(n) +
                              " points");
    }
    Eigen::MatrixXd pts = to_factor_space(universe.features, metric);
    Eigen::VectorXd dist = distances_to_all(pts, pts.row(x_index).transpose());
    dist(x_index) = std::numeric_limits<double>::infinity();
    std::vector<int> ranked = smallest_k(dist, r);
    return universe.labels[ranked[r - 1]] == universe.labels[x_index] ? 1 : 0;
}

ClasswiseStats classwise_statistics(const Dataset& train, int k,
                                    const DistanceMetric& metric) {
    train.validate();
    const int n = static_cast<int>(train.rows());
    if (k < 1 || k > n - 1) {
        throw ValidationError("enn: k = " + std::to_string(k) +
                              " must lie in [1, " + std::to_string(n - 1) + "]");
    }
    if (metric.dim() >= 0 && metric.dim() != train.dims()) {
        throw ValidationError("enn: metric dimension does not match the data");
    }

    ClasswiseStats stats;
    stats.k = k;
    stats.labels = train.labels;
    stats.class_counts = train.class_counts();
    stats.neighbor_indices.resize(n);
    stats.neighbor_distances.resize(n);

    Eigen::MatrixXd pts = to_factor_space(train.features, metric);
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd dist = distances_to_all(pts, pts.row(i).transpose());
        dist(i) = std::numeric_limits<double>::infinity();
        std::vector<int> ranked = smallest_k(dist, k);
        auto& stored = stats.neighbor_distances[i];
        stored.reserve(k);
        for (int idx : ranked) stored.push_back(dist(idx));
        stats.neighbor_indices[i] = std::move(ranked);
    }

    const int num_classes = stats.num_classes();
    std::vector<long> counts = coherence_counts(stats, k);
    stats.t.resize(num_classes);
    for (int c = 0; c < num_classes; ++c) {
        stats.t(c) = static_cast<double>(counts[c]) /
                     (static_cast<double>(stats.class_counts[c]) * k);
    }
    return stats;
}

ClasswiseStats truncate(const ClasswiseStats& stats, int k) {
    if (k < 1 || k > stats.k) {
        throw ValidationError("enn: cannot truncate statistics from k = " +
                              std::to_string(stats.k) + " to k = " +
                              std::to_string(k));
    }
    ClasswiseStats out;
    out.k = k;
    out.labels = stats.labels;
    out.class_counts = stats.class_counts;
    out.neighbor_indices.resize(stats.neighbor_indices.size());
    out.neighbor_distances.resize(stats.neighbor_distances.size());
    for (std::size_t j = 0; j < stats.neighbor_indices.size(); ++j) {
        out.neighbor_indices[j].assign(stats.neighbor_indices[j].begin(),
                                       stats.neighbor_indices[j].begin() + k);
        out.neighbor_distances[j].assign(stats.neighbor_distances[j].begin(),
                                         stats.neighbor_distances[j].begin() + k);
    }
    const int num_classes = out.num_classes();
    std::vector<long> counts = coherence_counts(out, k);
    out.t.resize(num_classes);
    for (int c = 0; c < num_classes; ++c) {
        out.t(c) = static_cast<double>(counts[c]) /
                   (static_cast<double>(out.class_counts[c]) * k);
    }
    return out;
}

EnnDeltas compute_deltas(const ClasswiseStats& stats, const Dataset& train,
                         const DistanceMetric& metric,
                         const Eigen::VectorXd& z) {
    if (z.size() != train.dims()) {
        throw ValidationError("enn: query length does not match the data");
    }
    const int n = static_cast<int>(train.rows());
    const int num_classes = stats.num_classes();
    const int k = stats.k;

    Eigen::MatrixXd pts = to_factor_space(train.features, metric);
    Eigen::MatrixXd zrow = to_factor_space(z.transpose(), metric);
    Eigen::VectorXd dist = distances_to_all(pts, zrow.row(0).transpose());

    EnnDeltas deltas;
    deltas.k_i.assign(num_classes, 0);
    for (int idx : smallest_k(dist, k)) ++deltas.k_i[train.labels[idx]];

    // The inserted point carries the highest index, so it enters a neighbor
    // list only by a strictly smaller distance, and the evicted slot is
    // always the old k-th neighbor.
    std::vector<int> displaced(num_classes, 0);  // per class of the point
    std::vector<int> lost(num_classes, 0);       // old k-th shared the class
    for (int j = 0; j < n; ++j) {
        if (!(dist(j) < stats.kth_distance(j))) continue;
        int own = train.labels[j];
        ++displaced[own];
        if (stats.labels[stats.neighbor_indices[j][k - 1]] == own) ++lost[own];
    }

    deltas.delta_n.assign(num_classes, std::vector<int>(num_classes, 0));
    for (int i = 0; i < num_classes; ++i) {
        for (int h = 0; h < num_classes; ++h) {
            deltas.delta_n[i][h] = (h == i) ? displaced[i] - lost[i] : -lost[i];
        }
    }
    return deltas;
}

EnnDecision predict_direct(const Dataset& train, int k,
                           const DistanceMetric& metric,
                           const Eigen::VectorXd& z) {
    train.validate();
    if (z.size() != train.dims()) {
        throw ValidationError("enn: query length does not match the data");
    }
    const int n = static_cast<int>(train.rows());
    if (k < 1 || k > n - 1) {
        throw ValidationError("enn: k = " + std::to_string(k) +
                              " must lie in [1, " + std::to_string(n - 1) + "]");
    }
    const int num_classes = train.num_classes();

    Dataset augmented = train;
    augmented.features.conservativeResize(n + 1, train.dims());
    augmented.features.row(n) = z.transpose();
    augmented.labels.push_back(0);

    EnnDecision out;
    out.score.resize(num_classes);
    for (int h = 0; h < num_classes; ++h) {
        augmented.labels[n] = h;
        ClasswiseStats stats = classwise_statistics(augmented, k, metric);
        double total = 0.0;
        for (int i = 0; i < num_classes; ++i) total += stats.t(i);
        out.score(h) = total;
    }
    out.label = 0;
    for (int h = 1; h < num_classes; ++h) {
        if (out.score(h) > out.score(out.label)) out.label = h;
    }
    return out;
}

EnnDecision predict_incremental(const ClasswiseStats& stats,
                                const Dataset& train,
                                const DistanceMetric& metric,
                                const Eigen::VectorXd& z) {
    const int num_classes = stats.num_classes();
    const int k = stats.k;
    EnnDeltas deltas = compute_deltas(stats, train, metric, z);
    std::vector<long> base = coherence_counts(stats, k);

    EnnDecision out;
    out.score.resize(num_classes);
    for (int h = 0; h < num_classes; ++h) {
        double total = 0.0;
        for (int i = 0; i < num_classes; ++i) {
            long numerator = base[i] + deltas.delta_n[i][h];
            long members = stats.class_counts[i];
            if (i == h) {
                numerator += deltas.k_i[h];  // the inserted point's own slots
                members += 1;
            }
            total += static_cast<double>(numerator) /
                     (static_cast<double>(members) * k);
        }
        out.score(h) = total;
    }
    out.label = 0;
    for (int h = 1; h < num_classes; ++h) {
        if (out.score(h) > out.score(out.label)) out.label = h;
    }
    return out;
}

EnnClassifier::EnnClassifier(const Dataset& train, int k, DistanceMetric metric)
    : train_(train),
      metric_(std::move(metric)),
      stats_(classwise_statistics(train, k, metric_)) {}

int EnnClassifier::predict(const Eigen::VectorXd& z) const {
    return predict_incremental(stats_, train_, metric_, z).label;
}

std::vector<int> EnnClassifier::predict_batch(const Eigen::MatrixXd& queries) const {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(queries.rows()));
    for (Eigen::Index r = 0; r < queries.rows(); ++r) {
        out.push_back(predict_incremental(stats_, train_, metric_,
                                          queries.row(r).transpose()).label);
    }
    return out;
}

}  // namespace ml::enn
