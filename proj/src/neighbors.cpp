#include "ml/neighbors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ml {

KnnModel::KnnModel(const Dataset& train, int k, DistanceMetric metric)
    : metric_(std::move(metric)) {
    train.validate();
    if (k < 1) {
        throw ValidationError("knn: k must be at least 1, got " +
                              std::to_string(k));
    }
    if (k > train.rows()) {
        throw ValidationError("knn: k = " + std::to_string(k) +
                              " exceeds the training size " +
                              std::to_string(train.rows()));
    }
    if (metric_.dim() >= 0 && metric_.dim() != train.dims()) {
        throw ValidationError("knn: metric dimension does not match the data");
    }
    if (metric_.kind() == DistanceMetric::Kind::Euclidean) {
        points_ = train.features;
    } else {
        points_ = train.features * metric_.factor(train.dims()).transpose();
    }
    labels_ = train.labels;
    num_classes_ = train.num_classes();
    k_ = k;
}

Eigen::VectorXd KnnModel::transform(const Eigen::VectorXd& x) const {
    if (x.size() != points_.cols()) {
        throw ValidationError("knn: query length does not match the data");
    }
    if (metric_.kind() == DistanceMetric::Kind::Euclidean) return x;
    return metric_.factor(x.size()) * x;
}

std::optional<std::string> KnnModel::check_k(int k, Eigen::Index n_train) {
    if (k >= 1 && k <= n_train && k % 2 == 0) {
        return "k = " + std::to_string(k) +
               " is even; odd k avoids two-way voting ties";
    }
    return std::nullopt;
}

NeighborList knn_search(const KnnModel& model, const Eigen::VectorXd& x) {
    Eigen::VectorXd q = model.transform(x);
    // Rank by the reported distances so the documented tie rule holds for the
    // values callers actually see.
    Eigen::VectorXd dist = (model.transformed_points().rowwise() - q.transpose())
                               .rowwise()
                               .squaredNorm()
                               .cwiseMax(0.0)
                               .cwiseSqrt();

    const int n = static_cast<int>(dist.size());
    const int k = model.k();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto closer = [&dist](int a, int b) {
        if (dist(a) != dist(b)) return dist(a) < dist(b);
        return a < b;
    };
    std::nth_element(order.begin(), order.begin() + (k - 1), order.end(), closer);
    std::sort(order.begin(), order.begin() + k, closer);

    NeighborList out;
    out.indices.assign(order.begin(), order.begin() + k);
    out.distances.reserve(k);
    for (int idx : out.indices) out.distances.push_back(dist(idx));
    return out;
}

KnnPrediction knn_predict(const KnnModel& model, const Eigen::VectorXd& x) {
    NeighborList neighbors = knn_search(model, x);
    const int num_classes = model.num_classes();
    const int k = model.k();

    std::vector<int> votes(num_classes, 0);
    std::vector<int> first_rank(num_classes, k);  // rank of closest class member
    for (int rank = 0; rank < k; ++rank) {
        int cls = model.labels()[neighbors.indices[rank]];
        ++votes[cls];
        if (first_rank[cls] == k) first_rank[cls] = rank;
    }

    int best = 0;
    for (int cls = 1; cls < num_classes; ++cls) {
        if (votes[cls] > votes[best] ||
            (votes[cls] == votes[best] && first_rank[cls] < first_rank[best])) {
            best = cls;
        }
    }

    KnnPrediction out;
    out.label = best;
    out.posterior.resize(num_classes);
    for (int cls = 0; cls < num_classes; ++cls) {
        out.posterior(cls) = static_cast<double>(votes[cls]) / k;
    }
    return out;
}

std::vector<int> knn_predict_batch(const KnnModel& model,
                                   const Eigen::MatrixXd& queries) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(queries.rows()));
    for (Eigen::Index r = 0; r < queries.rows(); ++r) {
        out.push_back(knn_predict(model, queries.row(r).transpose()).label);
    }
    return out;
}

}  // namespace ml
