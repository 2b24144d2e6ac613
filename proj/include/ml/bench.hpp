#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ml/dataset.hpp"
#include "ml/svm.hpp"

namespace ml::bench {

inline constexpr const char* kAlgorithms[] = {"KNN", "ENN", "SVM", "LMNN"};

/// One dataset in the manifest. Mirrors the CSV schema knobs.
struct DatasetEntry {
    std::string id;
    std::string path;
    int label_column = -1;
    std::string missing_marker = "?";
    std::string missing_policy = "drop";  // "drop" | "impute"
    std::string delimiter = ",";          // "," or "ws" (any whitespace)
    std::vector<int> drop_columns;
    int skip_rows = 0;
};

struct Protocol {
    double test_fraction = 0.3;
    std::uint64_t seed = 42;
    int folds = 5;
    int repeats = 5;
};

/// Kernel grid entry; gamma may be deferred to the fitted data.
struct KernelChoice {
    svm::KernelSpec spec;
    bool gamma_auto = false;
};

struct Grids {
    std::vector<int> knn_k = {1, 3, 5, 7, 9, 11};
    std::vector<int> enn_k = {1, 3, 5, 7, 9, 11};
    std::vector<double> svm_c = {0.1, 1.0, 10.0, 100.0};
    std::vector<KernelChoice> svm_kernels;  // default: one auto-gamma RBF
    std::vector<int> lmnn_k_t = {3};
    std::vector<double> lmnn_mu = {0.5};
    int lmnn_max_iter = 200;
    double lmnn_tol = 1e-5;
};

struct BenchManifest {
    std::vector<DatasetEntry> datasets;
    Protocol protocol;
    Grids grids;
    std::string output_dir = "out";
    // Optional per-dataset/per-algorithm reference accuracies; when present
    // the emitted table gains a delta section.
    std::map<std::string, std::map<std::string, double>> reference;
};

BenchManifest load_manifest(const std::string& path);
BenchManifest parse_manifest(const std::string& json_text);

/// Schema/file checks only; throws ConfigError (schema) or IoError (files).
void validate_manifest(const BenchManifest& manifest, bool check_files);

struct EvalReport {
    std::string dataset_id;
    std::string algorithm;
    std::string params;
    std::uint64_t seed = 0;  // split seed for this repeat
    int repeat = 0;
    double accuracy = 0.0;
    Eigen::MatrixXi confusion;
    double wall_time_s = 0.0;
    bool converged = true;
};

/// Accuracy and confusion counts; confusion(i, j) counts truth i predicted j.
struct Evaluation {
    double accuracy = 0.0;
    Eigen::MatrixXi confusion;
};

Evaluation evaluate(const std::vector<int>& predicted,
                    const std::vector<int>& truth, int num_classes);

struct BenchOptions {
    int jobs = 1;
    bool eval_on_train = false;  // extra LMNN-metric 1-NN train-set diagnostic
    bool dump_metrics = false;   // write learned metric matrices as CSV
    bool verbose = false;
};

/// What the grid selection chose, exposed for protocol-hygiene tests.
struct SelectionLog {
    int knn_k = 0;
    int enn_k = 0;
    double svm_c = 0.0;
    std::string svm_kernel;
    int lmnn_k_t = 0;
    double lmnn_mu = 0.0;
    Eigen::VectorXd norm_mean;
    Eigen::VectorXd norm_std;
};

struct DiagnosticReport {
    std::string dataset_id;
    std::string label;  // e.g. "LMNN-metric 1-NN on train"
    double accuracy = 0.0;
};

struct BenchResult {
    std::vector<EvalReport> reports;
    std::vector<std::string> dataset_errors;  // per-dataset failures
    std::vector<DiagnosticReport> diagnostics;
    std::vector<std::string> notes;  // odd-k advice, fold clamping, ...
    std::map<std::string, Eigen::MatrixXd> learned_metrics;  // dataset -> M
};

/// Full harness: ingest -> split -> impute/normalize (train-fitted) ->
/// cross-validated grid selection on the training portion -> final fit ->
/// held-out evaluation, for every dataset x algorithm x repeat. All
/// randomness derives from the manifest seed; a missing dataset file is
/// recorded and the run continues.
BenchResult run(const BenchManifest& manifest, const BenchOptions& options = {});

/// Selection + final fits for one prepared split (raw, un-normalized train
/// and test). The test portion is only touched by the final evaluation;
/// exposed so tests can poison it and confirm selection never looks.
std::vector<EvalReport> run_cells_on_split(
    const std::string& dataset_id, const Dataset& train, const Dataset& test,
    const Grids& grids, const Protocol& protocol, std::uint64_t split_seed,
    int repeat, SelectionLog* log = nullptr,
    std::vector<std::string>* notes = nullptr,
    Eigen::MatrixXd* learned_metric = nullptr);

/// Writes results.csv, table.md, fig5.csv, timings.csv, run_info.json (and
/// diagnostics.csv when diagnostics exist) into out_dir. Everything except
/// timings.csv is byte-deterministic for a fixed manifest. Throws IoError up
/// front when out_dir cannot be created or written.
void emit(const BenchManifest& manifest, const BenchResult& result,
          const std::string& out_dir);

/// The rendered accuracy table (same content as table.md).
std::string render_table(const BenchManifest& manifest,
                         const BenchResult& result);

}  // namespace ml::bench
