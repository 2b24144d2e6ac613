#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "ml/dataset.hpp"

namespace ml::svm {

/// Kernel function K(x, y).
struct KernelSpec {
    enum class Kind { Linear, Polynomial, Rbf };

    Kind kind = Kind::Linear;
    int degree = 3;       // polynomial only
    double coef0 = 0.0;   // polynomial only
    double gamma = 1.0;   // rbf only, must be > 0

    static KernelSpec linear();
    static KernelSpec polynomial(int degree, double coef0 = 0.0);
    static KernelSpec rbf(double gamma);

    std::string describe() const;
};

double kernel_eval(const KernelSpec& spec, const Eigen::VectorXd& x,
                   const Eigen::VectorXd& y);

/// gamma = 1 / (d * mean per-feature variance); falls back to 1/d when the
/// data is constant.
double auto_gamma(const Eigen::MatrixXd& x);

struct SolveOptions {
    double tol = 1e-3;          // KKT tolerance
    int max_passes = 0;         // 0 -> 10 * m sweeps
    Eigen::Index dense_gram_limit = 4000;  // above this, LRU kernel rows
    bool record_objective = false;         // dual objective per sweep (O(m^2))
};

/// Converged dual solution of the soft-margin problem. Invariants at
/// convergence: 0 <= alpha_i <= C, |sum alpha_i y_i| <= 1e-6, and every KKT
/// residual within the solver tolerance.
struct SvmDual {
    std::vector<double> alpha;          // length m
    double b = 0.0;
    std::vector<int> support_indices;   // indices with alpha > 0
    double C = 1.0;
    KernelSpec kernel;
    std::vector<double> signed_labels;  // length m, values in {-1, +1}
    bool converged = false;
    int sweeps = 0;
    std::vector<double> objective_history;  // filled when requested

    // Compact view used by decide(): support rows and alpha_i * y_i.
    Eigen::MatrixXd support_points;
    Eigen::VectorXd support_coeff;
};

/// SMO-style pairwise coordinate ascent on the dual. Requires both classes
/// present and C > 0. When the sweep budget runs out the best iterate is
/// returned with converged = false.
SvmDual solve_binary(const Eigen::MatrixXd& x, const std::vector<double>& y,
                     double C, const KernelSpec& kernel,
                     const SolveOptions& options = {});

struct Decision {
    int sign = +1;  // zero score maps to +1
    double score = 0.0;
};

/// Evaluates sum_j alpha_j y_j K(x_j, z) + b over the support vectors.
Decision decide(const SvmDual& model, const Eigen::VectorXd& z);

/// Dual objective W(alpha) = sum alpha - 1/2 sum_ij alpha_i alpha_j y_i y_j
/// K_ij, for tests and convergence reporting. O(m^2) kernel evaluations.
double dual_objective(const Eigen::MatrixXd& x, const std::vector<double>& y,
                      const std::vector<double>& alpha,
                      const KernelSpec& kernel);

/// Largest KKT violation over all points; converged models stay within the
/// solver tolerance.
double kkt_violation(const SvmDual& model, const Eigen::MatrixXd& x);

/// One-vs-one reduction: one binary machine per unordered class pair. The
/// lower class index of the pair takes the +1 side.
struct MulticlassSvm {
    struct PairwiseModel {
        int class_a = 0;  // +1 side
        int class_b = 1;  // -1 side
        SvmDual model;
    };
    std::vector<PairwiseModel> machines;
    int num_classes = 0;
    bool all_converged = true;
};

MulticlassSvm fit_multiclass(const Dataset& train, double C,
                             const KernelSpec& kernel,
                             const SolveOptions& options = {});

/// Plurality vote over the pairwise decisions; vote ties break by the summed
/// |score| of won duels, then by the lower class index.
int predict_multiclass(const MulticlassSvm& model, const Eigen::VectorXd& z);

std::vector<int> predict_multiclass_batch(const MulticlassSvm& model,
                                          const Eigen::MatrixXd& queries);

}  // namespace ml::svm
