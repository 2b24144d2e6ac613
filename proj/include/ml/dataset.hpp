#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ml/errors.hpp"

namespace ml {

/// A fixed table of numeric samples with integer class labels.
///
/// Immutable by convention once built: every pipeline stage returns a new
/// Dataset instead of mutating in place, so instances are safe to share
/// across threads.
struct Dataset {
    Eigen::MatrixXd features;               // n x d, one row per sample
    std::vector<int> labels;                // values in [0, num_classes)
    std::vector<std::string> class_names;   // index -> original label text
    std::vector<std::string> feature_names; // d entries
    std::string source_id;

    Eigen::Index rows() const { return features.rows(); }
    Eigen::Index dims() const { return features.cols(); }
    int num_classes() const { return static_cast<int>(class_names.size()); }

    /// Per-class sample counts, indexed by class.
    std::vector<int> class_counts() const;

    /// True if any feature cell is NaN (missing value awaiting imputation).
    bool has_missing() const;

    /// Throws ValidationError unless n >= 1, d >= 1, N >= 2, every label is in
    /// range, every class occurs, and (unless allow_missing) no cell is
    /// NaN/Inf.
    void validate(bool allow_missing = false) const;
};

enum class MissingPolicy {
    Drop,   // rows with missing cells are dropped at load time
    Impute, // missing cells kept as NaN; fill later from training statistics
};

/// Column roles and parsing rules for one CSV file.
struct CsvSchema {
    int label_column = -1;          // negative counts from the end (-1 = last)
    std::string missing_marker = "?";
    MissingPolicy missing_policy = MissingPolicy::Drop;
    char delimiter = ',';           // '\0' means "any whitespace run"
    std::vector<int> drop_columns;  // raw column indices to ignore (ids, ...)
    int skip_rows = 0;              // raw lines to discard before parsing
    std::string source_id;
};

struct LoadStats {
    std::size_t rows_kept = 0;
    std::size_t rows_dropped = 0;   // dropped by the missing-value policy
    bool header_detected = false;
};

/// Reads a UTF-8 CSV (LF or CRLF), encodes labels by first appearance, and
/// applies the missing-value policy. An optional single header row is
/// detected by a non-numeric cell in a feature column.
Dataset load_csv(const std::string& path, const CsvSchema& schema,
                 LoadStats* stats = nullptr);

/// Per-feature z-score parameters. Fit on the training portion only.
struct NormalizationParams {
    Eigen::VectorXd mean;
    Eigen::VectorXd stddev;  // 1 substituted for constant columns
};

NormalizationParams fit_normalizer(const Dataset& train);
Dataset apply_normalizer(const NormalizationParams& params, const Dataset& data);

/// Median-based fill values for datasets loaded with MissingPolicy::Impute.
/// Fit on the training portion; training rows use their own class median,
/// held-out rows use the label-free global median.
struct ImputeParams {
    Eigen::MatrixXd class_median;   // N x d
    Eigen::VectorXd global_median;  // d
};

ImputeParams fit_imputer(const Dataset& train);
Dataset apply_imputer(const ImputeParams& params, const Dataset& data,
                      bool use_labels);

struct SplitSpec {
    double test_fraction = 0.3;
    std::uint64_t seed = 42;
    bool stratified = true;
};

struct SplitIndices {
    std::vector<int> train;
    std::vector<int> test;
};

/// Partitions [0, labels.size()) per class: round(class_count * fraction)
/// test samples, clamped to keep at least one sample per class on each side.
/// Deterministic for a fixed seed; indices come back sorted ascending.
SplitIndices split_indices(const std::vector<int>& labels, int num_classes,
                           const SplitSpec& spec);

std::pair<Dataset, Dataset> split_stratified(const Dataset& data,
                                             const SplitSpec& spec);

/// Row subset in the given order. Keeps the full class/feature naming.
Dataset take(const Dataset& data, const std::vector<int>& indices);

struct FoldIndices {
    std::vector<int> train;
    std::vector<int> validation;
};

/// Stratified k-fold assignment: per class, a seeded shuffle dealt
/// round-robin. Requires 2 <= k_folds <= smallest class count.
std::vector<FoldIndices> kfold_indices(const std::vector<int>& labels,
                                       int num_classes, int k_folds,
                                       std::uint64_t seed);

struct Fold {
    Dataset train;
    Dataset validation;
};

std::vector<Fold> kfold(const Dataset& data, int k_folds, std::uint64_t seed);

}  // namespace ml
