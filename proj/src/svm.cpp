#include "ml/svm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>

namespace ml::svm {

KernelSpec KernelSpec::linear() { return KernelSpec{}; }

KernelSpec KernelSpec::polynomial(int degree, double coef0) {
    KernelSpec spec;
    spec.kind = Kind::Polynomial;
    spec.degree = degree;
    spec.coef0 = coef0;
    return spec;
}

KernelSpec KernelSpec::rbf(double gamma) {
    KernelSpec spec;
    spec.kind = Kind::Rbf;
    spec.gamma = gamma;
    return spec;
}

std::string KernelSpec::describe() const {
    std::ostringstream out;
    switch (kind) {
        case Kind::Linear:
            out << "linear";
            break;
        case Kind::Polynomial:
            out << "poly(d=" << degree << ",c0=" << coef0 << ")";
            break;
        case Kind::Rbf:
            out << "rbf(g=" << gamma << ")";
            break;
    }
    return out.str();
}

namespace {

void check_kernel(const KernelSpec& spec) {
    if (spec.kind == KernelSpec::Kind::Polynomial && spec.degree < 1) {
        throw ValidationError("svm: polynomial degree must be at least 1");
    }
    if (spec.kind == KernelSpec::Kind::Rbf && !(spec.gamma > 0.0)) {
        throw ValidationError("svm: rbf gamma must be positive");
    }
}

}  // namespace

double kernel_eval(const KernelSpec& spec, const Eigen::VectorXd& x,
                   const Eigen::VectorXd& y) {
    if (x.size() != y.size()) {
        throw ValidationError("svm: kernel arguments differ in length");
    }
    check_kernel(spec);
    switch (spec.kind) {
        case KernelSpec::Kind::Linear:
            return x.dot(y);
        case KernelSpec::Kind::Polynomial:
            return std::pow(x.dot(y) + spec.coef0, spec.degree);
        case KernelSpec::Kind::Rbf:
            return std::exp(-spec.gamma * (x - y).squaredNorm());
    }
    return 0.0;
}

double auto_gamma(const Eigen::MatrixXd& x) {
    if (x.rows() < 1 || x.cols() < 1) {
        throw ValidationError("svm: auto gamma needs a non-empty matrix");
    }
    const double d = static_cast<double>(x.cols());
    Eigen::RowVectorXd mean = x.colwise().mean();
    double total_var =
        (x.rowwise() - mean).array().square().sum() / static_cast<double>(x.rows());
    double mean_var = total_var / d;
    if (mean_var < 1e-12) return 1.0 / d;
    return 1.0 / (d * mean_var);
}

namespace {

// On-demand kernel rows with a least-recently-used budget. Below the dense
// limit every computed row is kept, which adds up to the full Gram matrix.
class KernelCache {
public:
    KernelCache(const Eigen::MatrixXd& x, const KernelSpec& spec,
                Eigen::Index dense_limit)
        : x_(x), spec_(spec), rows_(x.rows()), stamp_(x.rows(), 0) {
        if (spec_.kind == KernelSpec::Kind::Rbf) {
            sqnorm_ = x_.rowwise().squaredNorm();
        }
        const Eigen::Index m = x_.rows();
        budget_ = (m <= dense_limit)
                      ? m
                      : std::max<Eigen::Index>(64, dense_limit * dense_limit / m);
    }

    const Eigen::VectorXd& row(Eigen::Index i) {
        if (rows_[i].size() == 0) {
            if (cached_ >= budget_) evict();
            rows_[i] = compute(i);
            ++cached_;
        }
        stamp_[i] = ++clock_;
        return rows_[i];
    }

private:
    Eigen::VectorXd compute(Eigen::Index i) const {
        Eigen::VectorXd dots = x_ * x_.row(i).transpose();
        switch (spec_.kind) {
            case KernelSpec::Kind::Linear:
                return dots;
            case KernelSpec::Kind::Polynomial:
                return (dots.array() + spec_.coef0).pow(spec_.degree);
            case KernelSpec::Kind::Rbf: {
                Eigen::ArrayXd d2 =
                    (sqnorm_.array() + sqnorm_(i) - 2.0 * dots.array()).max(0.0);
                return (-spec_.gamma * d2).exp();
            }
        }
        return dots;
    }

    void evict() {
        Eigen::Index victim = -1;
        std::uint64_t oldest = std::numeric_limits<std::uint64_t>::max();
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(rows_.size()); ++i) {
            if (rows_[i].size() != 0 && stamp_[i] < oldest) {
                oldest = stamp_[i];
                victim = i;
            }
        }
        if (victim >= 0) {
            rows_[victim].resize(0);
            --cached_;
        }
    }

    const Eigen::MatrixXd& x_;
    KernelSpec spec_;
    Eigen::VectorXd sqnorm_;
    std::vector<Eigen::VectorXd> rows_;
    std::vector<std::uint64_t> stamp_;
    std::uint64_t clock_ = 0;
    Eigen::Index budget_ = 0;
    Eigen::Index cached_ = 0;
};

class SmoSolver {
public:
    SmoSolver(const Eigen::MatrixXd& x, const std::vector<double>& y, double C,
              const KernelSpec& kernel, const SolveOptions& options)
        : x_(x),
          y_(y),
          c_(C),
          kernel_(kernel),
          options_(options),
          m_(x.rows()),
          cache_(x, kernel, options.dense_gram_limit),
          alpha_(Eigen::VectorXd::Zero(x.rows())),
          errors_(x.rows()) {
        bound_eps_ = 1e-8 * c_;
        for (Eigen::Index i = 0; i < m_; ++i) errors_(i) = -y_[i];  // f == 0
    }

    SvmDual run() {
        const int max_sweeps =
            options_.max_passes > 0
                ? options_.max_passes
                : std::max(20000, 600 * static_cast<int>(m_));

        SvmDual model;
        int changed = 0;
        bool examine_all = true;
        int sweeps = 0;
        bool converged = false;
        while (changed > 0 || examine_all) {
            if (sweeps >= max_sweeps) break;
            changed = 0;
            for (Eigen::Index i = 0; i < m_; ++i) {
                if (examine_all || is_free(alpha_(i))) changed += examine(i);
            }
            ++sweeps;
            if (options_.record_objective) {
                model.objective_history.push_back(objective());
            }
            if (examine_all) {
                examine_all = false;
            } else if (changed == 0) {
                examine_all = true;
            }
        }
        converged = (changed == 0 && !examine_all);

        model.C = c_;
        model.kernel = kernel_;
        model.signed_labels = y_;
        model.converged = converged;
        model.sweeps = sweeps;
        model.alpha.assign(alpha_.data(), alpha_.data() + m_);
        finalize(model);
        return model;
    }

private:
    bool at_lower(double a) const { return a <= bound_eps_; }
    bool at_upper(double a) const { return a >= c_ - bound_eps_; }
    bool is_free(double a) const { return !at_lower(a) && !at_upper(a); }

    // Exact dual objective from cached rows; only used when recording.
    double objective() const {
        double linear = alpha_.sum();
        double quad = 0.0;
        for (Eigen::Index i = 0; i < m_; ++i) {
            if (alpha_(i) == 0.0) continue;
            const Eigen::VectorXd& ki = cache_.row(i);
            double gi = 0.0;
            for (Eigen::Index j = 0; j < m_; ++j) {
                if (alpha_(j) == 0.0) continue;
                gi += alpha_(j) * y_[j] * ki(j);
            }
            quad += alpha_(i) * y_[i] * gi;
        }
        return linear - 0.5 * quad;
    }

    int examine(Eigen::Index i2) {
        const double y2 = y_[i2];
        const double a2 = alpha_(i2);
        const double e2 = errors_(i2);
        const double r2 = e2 * y2;
        const bool violated = (r2 < -options_.tol && !at_upper(a2)) ||
                              (r2 > options_.tol && !at_lower(a2));
        if (!violated) return 0;

        // First choice: the free point with the largest |E1 - E2| step.
        Eigen::Index best = -1;
        double best_gap = -1.0;
        for (Eigen::Index j = 0; j < m_; ++j) {
            if (!is_free(alpha_(j))) continue;
            double gap = std::abs(errors_(j) - e2);
            if (gap > best_gap) {
                best_gap = gap;
                best = j;
            }
        }
        if (best >= 0 && take_step(best, i2)) return 1;

        for (Eigen::Index j = 0; j < m_; ++j) {
            if (is_free(alpha_(j)) && take_step(j, i2)) return 1;
        }
        for (Eigen::Index j = 0; j < m_; ++j) {
            if (take_step(j, i2)) return 1;
        }
        return 0;
    }

    bool take_step(Eigen::Index i1, Eigen::Index i2) {
        if (i1 == i2) return false;
        const double alph1 = alpha_(i1);
        const double alph2 = alpha_(i2);
        const double y1 = y_[i1];
        const double y2 = y_[i2];
        const double e1 = errors_(i1);
        const double e2 = errors_(i2);
        const double s = y1 * y2;

        double low, high;
        if (s < 0.0) {
            low = std::max(0.0, alph2 - alph1);
            high = std::min(c_, c_ + alph2 - alph1);
        } else {
            low = std::max(0.0, alph1 + alph2 - c_);
            high = std::min(c_, alph1 + alph2);
        }
        if (low >= high) return false;

        const Eigen::VectorXd& k1 = cache_.row(i1);
        const double k11 = k1(i1);
        const double k12 = k1(i2);
        const double k22 = cache_.row(i2)(i2);
        const double eta = k11 + k22 - 2.0 * k12;

        double a2;
        if (eta > 0.0) {
            a2 = alph2 + y2 * (e1 - e2) / eta;
            a2 = std::clamp(a2, low, high);
        } else {
            // Objective gain along the constraint line is
            // t*y2*(E1-E2) - eta*t^2/2 for t = a2 - alph2; with eta <= 0 the
            // maximum sits at one of the clip ends.
            auto gain = [&](double t) {
                return t * y2 * (e1 - e2) - 0.5 * eta * t * t;
            };
            const double gain_low = gain(low - alph2);
            const double gain_high = gain(high - alph2);
            if (gain_low > gain_high + 1e-12) {
                a2 = low;
            } else if (gain_high > gain_low + 1e-12) {
                a2 = high;
            } else {
                return false;
            }
        }
        // Anti-churn floor only. A violation beyond tol always calls for a
        // step far above roundoff scale, so rejecting moves this small never
        // limits the final KKT precision; it only keeps the sweep loop from
        // cycling on roundoff-sized updates. The floor must not scale with
        // the current alphas or precision would degrade as C grows.
        if (std::abs(a2 - alph2) < 1e-10 * c_) return false;

        // The paired update keeps sum_i alpha_i y_i fixed; the clamp only
        // trims roundoff spill outside the box.
        double a1 = alph1 + s * (alph2 - a2);
        a1 = std::clamp(a1, 0.0, c_);

        const double d1 = y1 * (a1 - alph1);
        const double d2 = y2 * (a2 - alph2);

        double delta_b;
        const double db1 = -e1 - d1 * k11 - d2 * k12;
        const double db2 = -e2 - d1 * k12 - d2 * k22;
        if (is_free(a1)) {
            delta_b = db1;
        } else if (is_free(a2)) {
            delta_b = db2;
        } else {
            delta_b = 0.5 * (db1 + db2);
        }

        // One statement per cached row: pulling a row can evict another, so
        // a reference must not outlive the next cache access.
        errors_ += d1 * cache_.row(i1);
        errors_ += d2 * cache_.row(i2);
        errors_.array() += delta_b;
        b_ += delta_b;
        alpha_(i1) = a1;
        alpha_(i2) = a2;
        return true;
    }

    void finalize(SvmDual& model) {
        std::vector<Eigen::Index> support;
        for (Eigen::Index i = 0; i < m_; ++i) {
            if (alpha_(i) > bound_eps_) support.push_back(i);
        }

        // Exact decision values, independent of the incremental error cache.
        Eigen::VectorXd g = Eigen::VectorXd::Zero(m_);
        for (Eigen::Index i : support) {
            g += (alpha_(i) * y_[i]) * cache_.row(i);
        }

        double b;
        int free_count = 0;
        double free_sum = 0.0;
        for (Eigen::Index i = 0; i < m_; ++i) {
            if (is_free(alpha_(i))) {
                free_sum += y_[i] - g(i);
                ++free_count;
            }
        }
        if (free_count > 0) {
            b = free_sum / free_count;
        } else {
            // Midpoint of the interval the complementarity conditions allow.
            double lo = -std::numeric_limits<double>::infinity();
            double hi = std::numeric_limits<double>::infinity();
            for (Eigen::Index i = 0; i < m_; ++i) {
                const double bound = y_[i] - g(i);
                const bool lower = at_lower(alpha_(i));
                if ((y_[i] > 0.0 && lower) || (y_[i] < 0.0 && !lower)) {
                    lo = std::max(lo, bound);
                } else {
                    hi = std::min(hi, bound);
                }
            }
            if (std::isinf(lo)) {
                b = std::isinf(hi) ? 0.0 : hi;
            } else if (std::isinf(hi)) {
                b = lo;
            } else {
                b = 0.5 * (lo + hi);
            }
        }
        model.b = b;

        model.support_indices.reserve(support.size());
        model.support_points.resize(static_cast<Eigen::Index>(support.size()),
                                    x_.cols());
        model.support_coeff.resize(static_cast<Eigen::Index>(support.size()));
        for (std::size_t s = 0; s < support.size(); ++s) {
            Eigen::Index i = support[s];
            model.support_indices.push_back(static_cast<int>(i));
            model.support_points.row(static_cast<Eigen::Index>(s)) = x_.row(i);
            model.support_coeff(static_cast<Eigen::Index>(s)) = alpha_(i) * y_[i];
        }
    }

    const Eigen::MatrixXd& x_;
    const std::vector<double>& y_;
    double c_;
    KernelSpec kernel_;
    SolveOptions options_;
    Eigen::Index m_;
    mutable KernelCache cache_;
    Eigen::VectorXd alpha_;
    Eigen::VectorXd errors_;
    double b_ = 0.0;
    double bound_eps_ = 0.0;
};

}  // namespace

SvmDual solve_binary(const Eigen::MatrixXd& x, const std::vector<double>& y,
                     double C, const KernelSpec& kernel,
                     const SolveOptions& options) {
    if (x.rows() < 2) {
        throw ValidationError("svm: needs at least 2 training points");
    }
    if (static_cast<Eigen::Index>(y.size()) != x.rows()) {
        throw ValidationError("svm: label count does not match row count");
    }
    if (x.hasNaN()) throw ValidationError("svm: features contain NaN");
    if (!(C > 0.0)) throw ValidationError("svm: C must be positive");
    if (options.max_passes < 0) {
        throw ValidationError("svm: max_passes must be non-negative");
    }
    check_kernel(kernel);
    bool has_pos = false, has_neg = false;
    for (double v : y) {
        if (v == 1.0) {
            has_pos = true;
        } else if (v == -1.0) {
            has_neg = true;
        } else {
            throw ValidationError("svm: labels must be exactly -1 or +1");
        }
    }
    if (!has_pos || !has_neg) {
        throw ValidationError("svm: both classes must be present");
    }

    SmoSolver solver(x, y, C, kernel, options);
    return solver.run();
}

Decision decide(const SvmDual& model, const Eigen::VectorXd& z) {
    if (model.support_points.cols() != z.size() &&
        model.support_points.rows() > 0) {
        throw ValidationError("svm: query length does not match the model");
    }
    double score = model.b;
    for (Eigen::Index s = 0; s < model.support_points.rows(); ++s) {
        score += model.support_coeff(s) *
                 kernel_eval(model.kernel, model.support_points.row(s).transpose(), z);
    }
    Decision out;
    out.score = score;
    out.sign = score < 0.0 ? -1 : +1;
    return out;
}

double dual_objective(const Eigen::MatrixXd& x, const std::vector<double>& y,
                      const std::vector<double>& alpha,
                      const KernelSpec& kernel) {
    if (static_cast<Eigen::Index>(y.size()) != x.rows() ||
        alpha.size() != y.size()) {
        throw ValidationError("svm: objective arguments disagree in size");
    }
    double linear = 0.0;
    for (double a : alpha) linear += a;
    double quad = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        if (alpha[i] == 0.0) continue;
        for (Eigen::Index j = 0; j < x.rows(); ++j) {
            if (alpha[j] == 0.0) continue;
            quad += alpha[i] * alpha[j] * y[i] * y[j] *
                    kernel_eval(kernel, x.row(i).transpose(), x.row(j).transpose());
        }
    }
    return linear - 0.5 * quad;
}

double kkt_violation(const SvmDual& model, const Eigen::MatrixXd& x) {
    if (static_cast<Eigen::Index>(model.alpha.size()) != x.rows()) {
        throw ValidationError("svm: model size does not match the data");
    }
    const double eps = 1e-8 * model.C;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double margin =
            model.signed_labels[i] * decide(model, x.row(i).transpose()).score;
        const double a = model.alpha[i];
        double violation;
        if (a <= eps) {
            violation = std::max(0.0, 1.0 - margin);
        } else if (a >= model.C - eps) {
            violation = std::max(0.0, margin - 1.0);
        } else {
            violation = std::abs(margin - 1.0);
        }
        worst = std::max(worst, violation);
    }
    return worst;
}

MulticlassSvm fit_multiclass(const Dataset& train, double C,
                             const KernelSpec& kernel,
                             const SolveOptions& options) {
    train.validate();
    MulticlassSvm out;
    out.num_classes = train.num_classes();
    for (int a = 0; a < out.num_classes; ++a) {
        for (int b = a + 1; b < out.num_classes; ++b) {
            std::vector<int> rows;
            for (Eigen::Index r = 0; r < train.rows(); ++r) {
                if (train.labels[r] == a || train.labels[r] == b) {
                    rows.push_back(static_cast<int>(r));
                }
            }
            Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()),
                              train.dims());
            std::vector<double> y(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                x.row(static_cast<Eigen::Index>(i)) = train.features.row(rows[i]);
                y[i] = train.labels[rows[i]] == a ? 1.0 : -1.0;
            }
            MulticlassSvm::PairwiseModel machine;
            machine.class_a = a;
            machine.class_b = b;
            machine.model = solve_binary(x, y, C, kernel, options);
            out.all_converged = out.all_converged && machine.model.converged;
            out.machines.push_back(std::move(machine));
        }
    }
    return out;
}

int predict_multiclass(const MulticlassSvm& model, const Eigen::VectorXd& z) {
    if (model.machines.empty()) {
        throw ValidationError("svm: multiclass model has no machines");
    }
    std::vector<int> votes(model.num_classes, 0);
    std::vector<double> strength(model.num_classes, 0.0);
    for (const auto& machine : model.machines) {
        Decision d = decide(machine.model, z);
        int winner = d.sign > 0 ? machine.class_a : machine.class_b;
        ++votes[winner];
        strength[winner] += std::abs(d.score);
    }
    int best = 0;
    for (int c = 1; c < model.num_classes; ++c) {
        if (votes[c] > votes[best] ||
            (votes[c] == votes[best] && strength[c] > strength[best])) {
            best = c;
        }
    }
    return best;
}

std::vector<int> predict_multiclass_batch(const MulticlassSvm& model,
                                          const Eigen::MatrixXd& queries) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(queries.rows()));
    for (Eigen::Index r = 0; r < queries.rows(); ++r) {
        out.push_back(predict_multiclass(model, queries.row(r).transpose()));
    }
    return out;
}

}  // namespace ml::svm
