#include "ml/lmnn.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace ml::lmnn {

namespace {

constexpr int kBlockRows = 256;

Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
    if (eig.info() != Eigen::Success) {
        throw NumericError("lmnn: eigendecomposition failed");
    }
    Eigen::VectorXd values = eig.eigenvalues().cwiseMax(0.0);
    return values.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

TargetNeighborMap select_target_neighbors(const Dataset& train, int k_t) {
    train.validate();
    if (k_t < 1) throw ValidationError("lmnn: k_t must be at least 1");
    const int n = static_cast<int>(train.rows());
    const int num_classes = train.num_classes();

    std::vector<std::vector<int>> by_class(num_classes);
    for (int i = 0; i < n; ++i) by_class[train.labels[i]].push_back(i);
    for (int c = 0; c < num_classes; ++c) {
        if (static_cast<int>(by_class[c].size()) <= k_t) {
            throw ValidationError("lmnn: class " + std::to_string(c) + " has " +
                                  std::to_string(by_class[c].size()) +
                                  " members, needs more than " +
                                  std::to_string(k_t));
        }
    }

    TargetNeighborMap map;
    map.k_t = k_t;
    map.targets.resize(n);
    for (int c = 0; c < num_classes; ++c) {
        const auto& members = by_class[c];
        Eigen::MatrixXd pts(static_cast<Eigen::Index>(members.size()),
                            train.dims());
        for (std::size_t i = 0; i < members.size(); ++i) {
            pts.row(static_cast<Eigen::Index>(i)) = train.features.row(members[i]);
        }
        for (std::size_t a = 0; a < members.size(); ++a) {
            Eigen::VectorXd d2 =
                (pts.rowwise() - pts.row(static_cast<Eigen::Index>(a)))
                    .rowwise()
                    .squaredNorm();
            d2(static_cast<Eigen::Index>(a)) =
                std::numeric_limits<double>::infinity();
            std::vector<int> order(members.size());
            for (std::size_t i = 0; i < members.size(); ++i) {
                order[i] = static_cast<int>(i);
            }
            auto closer = [&](int p, int q) {
                if (d2(p) != d2(q)) return d2(p) < d2(q);
                return members[p] < members[q];  // ties by original index
            };
            std::nth_element(order.begin(), order.begin() + (k_t - 1),
                             order.end(), closer);
            std::sort(order.begin(), order.begin() + k_t, closer);
            auto& row = map.targets[members[a]];
            row.reserve(k_t);
            for (int r = 0; r < k_t; ++r) row.push_back(members[order[r]]);
        }
    }
    return map;
}

Eigen::MatrixXd MetricModel::factor() const { return psd_factor(m); }

double squared_distance(const MetricModel& model, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& y) {
    if (x.size() != y.size() || x.size() != model.m.rows()) {
        throw ValidationError("lmnn: vector length does not match the metric");
    }
    Eigen::VectorXd diff = x - y;
    return std::max(0.0, diff.dot(model.m * diff));
}

LossInfo loss_and_subgradient(const MetricModel& model, const Dataset& train,
                              const TargetNeighborMap& targets,
                              bool collect_triples) {
    const int n = static_cast<int>(train.rows());
    const Eigen::Index d = train.dims();
    if (static_cast<int>(targets.targets.size()) != n || targets.k_t < 1) {
        throw ValidationError("lmnn: target map does not match the data");
    }
    if (model.m.rows() != d || model.m.cols() != d) {
        throw ValidationError("lmnn: metric dimension does not match the data");
    }
    const double mu = model.mu;
    const double pull_w = 1.0 - mu;

    Eigen::MatrixXd lt = psd_factor(model.m);
    Eigen::MatrixXd xt = train.features * lt.transpose();
    Eigen::VectorXd sq = xt.rowwise().squaredNorm();

    LossInfo info;
    // Gradient, accumulated as G = X^T P: each weighted pair (a, b, w) adds
    // w * (x_a - x_b) to P.row(a) and the negation to P.row(b), which expands
    // to the sum of weighted outer products without forming any of them.
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, d);

    for (int block_start = 0; block_start < n; block_start += kBlockRows) {
        const int rows = std::min(kBlockRows, n - block_start);
        Eigen::MatrixXd d2 =
            -2.0 * (xt.middleRows(block_start, rows) * xt.transpose());
        d2.colwise() += sq.segment(block_start, rows);
        d2.rowwise() += sq.transpose();
        d2 = d2.cwiseMax(0.0);

        for (int r = 0; r < rows; ++r) {
            const int i = block_start + r;
            const auto& row_targets = targets.targets[i];
            const int k_t = static_cast<int>(row_targets.size());
            double radius = 0.0;
            for (int j : row_targets) {
                const double dij = d2(r, j);
                info.pull += pull_w * dij;
                radius = std::max(radius, dij);
                p.row(i) += pull_w * (train.features.row(i) - train.features.row(j));
                p.row(j) += pull_w * (train.features.row(j) - train.features.row(i));
            }
            radius += 1.0;

            // Row updates are batched by multiplicity: a target pair hit by
            // many imposters (or an imposter hitting many targets) folds into
            // one weighted update instead of one per triple.
            std::vector<double> target_hits(k_t, 0.0);
            const int own = train.labels[i];
            for (int l = 0; l < n; ++l) {
                if (train.labels[l] == own) continue;
                const double dil = d2(r, l);
                if (dil > radius) continue;
                double imposter_hits = 0.0;
                for (int slot = 0; slot < k_t; ++slot) {
                    const double hinge = 1.0 + d2(r, row_targets[slot]) - dil;
                    if (hinge < 0.0) continue;
                    info.push += mu * hinge;
                    ++info.active_count;
                    if (collect_triples) {
                        info.active.push_back({i, row_targets[slot], l});
                    }
                    target_hits[slot] += 1.0;
                    imposter_hits += 1.0;
                }
                if (imposter_hits > 0.0) {
                    const double w = mu * imposter_hits;
                    p.row(i) -= w * (train.features.row(i) - train.features.row(l));
                    p.row(l) += w * (train.features.row(i) - train.features.row(l));
                }
            }
            for (int slot = 0; slot < k_t; ++slot) {
                if (target_hits[slot] == 0.0) continue;
                const double w = mu * target_hits[slot];
                const int j = row_targets[slot];
                p.row(i) += w * (train.features.row(i) - train.features.row(j));
                p.row(j) -= w * (train.features.row(i) - train.features.row(j));
            }
        }
    }

    info.loss = info.pull + info.push;
    info.grad = train.features.transpose() * p;
    info.grad = 0.5 * (info.grad + info.grad.transpose());
    return info;
}

Eigen::MatrixXd project_psd(const Eigen::MatrixXd& a) {
    if (a.rows() != a.cols() || a.rows() < 1) {
        throw ValidationError("lmnn: projection needs a square matrix");
    }
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
        throw ValidationError("lmnn: projection input is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (a + a.transpose()));
    if (eig.info() != Eigen::Success) {
        throw NumericError("lmnn: eigendecomposition failed");
    }
    Eigen::VectorXd values = eig.eigenvalues().cwiseMax(0.0);
    Eigen::MatrixXd out = eig.eigenvectors() * values.asDiagonal() *
                          eig.eigenvectors().transpose();
    return 0.5 * (out + out.transpose());
}

MetricModel fit(const Dataset& train, const LmnnConfig& config) {
    train.validate();
    if (!(config.mu > 0.0 && config.mu < 1.0)) {
        throw ValidationError("lmnn: mu must lie strictly in (0, 1)");
    }
    if (config.max_iter < 1) {
        throw ValidationError("lmnn: max_iter must be at least 1");
    }
    if (!(config.tol > 0.0)) throw ValidationError("lmnn: tol must be positive");
    if (config.step < 0.0) {
        throw ValidationError("lmnn: step must be non-negative");
    }
    if (config.k_t < 1) throw ValidationError("lmnn: k_t must be at least 1");

    int smallest_class = std::numeric_limits<int>::max();
    for (int count : train.class_counts()) {
        smallest_class = std::min(smallest_class, count);
    }
    if (smallest_class < 2) {
        throw ValidationError("lmnn: every class needs at least 2 members");
    }
    const int k_t = std::min(config.k_t, smallest_class - 1);

    const Eigen::Index d = train.dims();
    MetricModel model;
    model.m = Eigen::MatrixXd::Identity(d, d);
    model.mu = config.mu;
    model.targets = select_target_neighbors(train, k_t);
    model.train_points = train.features;
    model.train_labels = train.labels;

    LossInfo current = loss_and_subgradient(model, train, model.targets, false);
    model.history.push_back(current.loss);

    double grad_norm = std::max(current.grad.norm(), 1e-12);
    double step = config.step > 0.0
                      ? config.step
                      : 1e-3 * model.m.norm() / grad_norm;
    const double step_floor = 1e-15 * step;

    for (int it = 1; it <= config.max_iter; ++it) {
        model.iterations = it;
        Eigen::MatrixXd candidate = project_psd(model.m - step * current.grad);

        MetricModel probe = model;
        probe.m = candidate;
        LossInfo cand = loss_and_subgradient(probe, train, model.targets, false);

        if (cand.loss <= current.loss) {
            const double change = std::abs(current.loss - cand.loss) /
                                  std::max(1.0, std::abs(current.loss));
            model.m = std::move(candidate);
            current = std::move(cand);
            model.history.push_back(current.loss);
            step *= 1.1;
            if (change < config.tol) {
                model.converged = true;
                break;
            }
        } else {
            step *= 0.5;
            // The step has collapsed to roundoff scale: candidate and
            // current matrix coincide numerically, a fixed point.
            if (step < step_floor) {
                model.converged = true;
                break;
            }
        }
    }
    return model;
}

DistanceMetric export_metric(const MetricModel& model) {
    return DistanceMetric::mahalanobis(model.m);
}

void save_metric_csv(const std::string& path, const Eigen::MatrixXd& m) {
    std::ofstream out(path);
    if (!out.is_open()) throw IoError("cannot write " + path);
    out << std::setprecision(17);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (c > 0) out << ',';
            out << m(r, c);
        }
        out << '\n';
    }
    if (!out.good()) throw IoError("failed while writing " + path);
}

Eigen::MatrixXd load_metric_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in.is_open()) throw IoError("cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row;
        std::size_t start = 0;
        while (start <= line.size()) {
            std::size_t end = line.find(',', start);
            if (end == std::string::npos) end = line.size();
            double value = 0.0;
            const char* first = line.data() + start;
            const char* last = line.data() + end;
            auto [ptr, ec] = std::from_chars(first, last, value);
            if (ec != std::errc{} || ptr != last) {
                throw ParseError(path + ":" + std::to_string(line_no) +
                                 ": bad matrix entry");
            }
            row.push_back(value);
            start = end + 1;
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw ParseError(path + ":" + std::to_string(line_no) +
                             ": ragged matrix row");
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty() || rows.size() != rows.front().size()) {
        throw ValidationError(path + ": matrix must be square and non-empty");
    }
    Eigen::MatrixXd m(rows.size(), rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows.size(); ++c) {
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                rows[r][c];
        }
    }
    return m;
}

}  // namespace ml::lmnn
