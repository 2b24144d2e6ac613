#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <vector>

#include "ml/neighbors.hpp"

using namespace ml;

namespace {

Dataset make_dataset(const Eigen::MatrixXd& x, std::vector<int> labels,
                     int num_classes) {
    Dataset data;
    data.features = x;
    data.labels = std::move(labels);
    for (int c = 0; c < num_classes; ++c) {
        data.class_names.push_back("c" + std::to_string(c));
    }
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        data.feature_names.push_back("f" + std::to_string(j));
    }
    return data;
}

Dataset random_dataset(std::mt19937& rng, int n, int d, int num_classes) {
    std::normal_distribution<double> g;
    std::uniform_int_distribution<int> pick(0, num_classes - 1);
    Eigen::MatrixXd x(n, d);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) x(i, j) = g(rng);
        labels[i] = pick(rng);
    }
    // Force every class to occur.
    for (int c = 0; c < num_classes; ++c) labels[c % n] = c;
    return make_dataset(x, labels, num_classes);
}

// Independent oracle: sort every index by the model's reported distance and
// keep the first k. Written against the public query interface only.
std::vector<int> full_sort_oracle(const KnnModel& model,
                                  const Eigen::VectorXd& x, int k) {
    Eigen::VectorXd q = model.transform(x);
    const Eigen::MatrixXd& points = model.transformed_points();
    std::vector<std::pair<double, int>> order;
    order.reserve(points.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        order.emplace_back((points.row(i).transpose() - q).norm(),
                           static_cast<int>(i));
    }
    std::stable_sort(order.begin(), order.end());
    std::vector<int> out;
    for (int i = 0; i < k; ++i) out.push_back(order[i].second);
    return out;
}

}  // namespace

TEST_CASE("knn_search matches the full-sort oracle on random queries") {
    std::mt19937 rng(101);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 60; ++trial) {
        std::uniform_int_distribution<int> nd(5, 40);
        std::uniform_int_distribution<int> dd(1, 5);
        int n = nd(rng);
        int d = dd(rng);
        Dataset data = random_dataset(rng, n, d, 2);
        std::uniform_int_distribution<int> kd(1, n);
        int k = kd(rng);
        KnnModel model(data, k);

        Eigen::VectorXd q(d);
        for (int j = 0; j < d; ++j) q(j) = g(rng);
        NeighborList found = knn_search(model, q);
        REQUIRE(static_cast<int>(found.indices.size()) == k);
        CHECK(found.indices == full_sort_oracle(model, q, k));
        CHECK(std::is_sorted(found.distances.begin(), found.distances.end()));
    }
}

TEST_CASE("duplicate points rank by lower training index") {
    Eigen::MatrixXd x(4, 1);
    x << 1.0, 5.0, 1.0, 1.0;
    Dataset data = make_dataset(x, {0, 1, 0, 1}, 2);
    KnnModel model(data, 3);
    Eigen::VectorXd q(1);
    q << 1.0;
    NeighborList found = knn_search(model, q);
    CHECK(found.indices == std::vector<int>{0, 2, 3});
    CHECK(found.distances[0] == 0.0);
}

TEST_CASE("majority vote: labels {A,A,B} at k=3 give posterior (2/3, 1/3)") {
    Eigen::MatrixXd x(3, 1);
    x << 0.0, 1.0, 2.0;
    Dataset data = make_dataset(x, {0, 0, 1}, 2);
    KnnModel model(data, 3);
    Eigen::VectorXd q(1);
    q << 0.5;
    KnnPrediction pred = knn_predict(model, q);
    CHECK(pred.label == 0);
    CHECK(pred.posterior(0) == doctest::Approx(2.0 / 3.0));
    CHECK(pred.posterior(1) == doctest::Approx(1.0 / 3.0));
    CHECK(pred.posterior.sum() == doctest::Approx(1.0));
}

TEST_CASE("k=1 posterior is one-hot") {
    Eigen::MatrixXd x(2, 1);
    x << 0.0, 10.0;
    Dataset data = make_dataset(x, {1, 0}, 2);
    KnnModel model(data, 1);
    Eigen::VectorXd q(1);
    q << 1.0;
    KnnPrediction pred = knn_predict(model, q);
    CHECK(pred.label == 1);
    CHECK(pred.posterior(1) == doctest::Approx(1.0));
    CHECK(pred.posterior(0) == doctest::Approx(0.0));
}

TEST_CASE("vote ties go to the class with the nearer neighbor") {
    // Neighbors at ranks 1 and 2 carry different classes; class of rank 1
    // must win the 1-1 tie even though its index is higher.
    Eigen::MatrixXd x(2, 1);
    x << 1.0, 2.0;
    Dataset data = make_dataset(x, {1, 0}, 2);
    KnnModel model(data, 2);
    Eigen::VectorXd q(1);
    q << 0.0;
    KnnPrediction pred = knn_predict(model, q);
    CHECK(pred.label == 1);
}

TEST_CASE("batch prediction agrees with single-query prediction") {
    std::mt19937 rng(202);
    Dataset data = random_dataset(rng, 25, 3, 3);
    KnnModel model(data, 5);
    std::normal_distribution<double> g;
    Eigen::MatrixXd queries(10, 3);
    for (int i = 0; i < 10; ++i) {
        for (int j = 0; j < 3; ++j) queries(i, j) = g(rng);
    }
    std::vector<int> batch = knn_predict_batch(model, queries);
    for (int i = 0; i < 10; ++i) {
        CHECK(batch[i] ==
              knn_predict(model, queries.row(i).transpose()).label);
    }
}

TEST_CASE("doubling every coordinate leaves neighbor ranking unchanged") {
    // Powers of two scale distances exactly, so the ranking is identical.
    std::mt19937 rng(303);
    Dataset data = random_dataset(rng, 30, 4, 2);
    Dataset doubled = data;
    doubled.features *= 2.0;
    KnnModel model(data, 7);
    KnnModel model2(doubled, 7);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXd q(4);
        for (int j = 0; j < 4; ++j) q(j) = g(rng);
        NeighborList a = knn_search(model, q);
        NeighborList b = knn_search(model2, (q * 2.0).eval());
        CHECK(a.indices == b.indices);
    }
}

TEST_CASE("mahalanobis knn can ignore a coordinate") {
    Eigen::MatrixXd x(3, 2);
    x << 0.0, 100.0,
         1.0, 0.0,
         3.0, 0.0;
    Dataset data = make_dataset(x, {0, 1, 1}, 2);

    Eigen::MatrixXd mask(2, 2);
    mask << 1.0, 0.0,
            0.0, 0.0;
    KnnModel masked(data, 1, DistanceMetric::mahalanobis(mask));
    KnnModel plain(data, 1);

    Eigen::VectorXd q(2);
    q << 0.4, 0.0;
    // Under the mask, point 0 (x=0) is nearest; Euclidean sees its second
    // coordinate and prefers point 1.
    CHECK(knn_search(masked, q).indices[0] == 0);
    CHECK(knn_search(plain, q).indices[0] == 1);
}

TEST_CASE("construction rejects bad arguments") {
    std::mt19937 rng(404);
    Dataset data = random_dataset(rng, 10, 2, 2);
    CHECK_THROWS_AS(KnnModel(data, 0), ValidationError);
    CHECK_THROWS_AS(KnnModel(data, 11), ValidationError);

    SUBCASE("metric dimension must match the data") {
        CHECK_THROWS_AS(
            KnnModel(data, 1,
                     DistanceMetric::mahalanobis(Eigen::MatrixXd::Identity(3, 3))),
            ValidationError);
    }
    SUBCASE("query dimension must match the data") {
        KnnModel model(data, 1);
        Eigen::VectorXd q(5);
        q.setZero();
        CHECK_THROWS_AS(knn_search(model, q), ValidationError);
    }
}

TEST_CASE("even k draws advice, odd k does not") {
    CHECK(KnnModel::check_k(4, 10).has_value());
    CHECK_FALSE(KnnModel::check_k(5, 10).has_value());
}
