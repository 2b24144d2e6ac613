#include "ml/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ml/enn.hpp"
#include "ml/lmnn.hpp"
#include "ml/metric.hpp"
#include "ml/neighbors.hpp"

namespace ml::bench {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string fmt_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

std::string fmt_number(double v) {
    std::ostringstream out;
    out << v;
    return out.str();
}

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t hash = 1469598103934665603ull;
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 1099511628211ull;
    }
    return hash;
}

std::uint64_t fold_seed(const std::string& dataset_id, std::uint64_t split_seed) {
    return fnv1a(dataset_id) ^ (0x9e3779b97f4a7c15ull +
                                split_seed * 0xbf58476d1ce4e5b9ull);
}

std::string sanitize_id(const std::string& id) {
    std::string out = id;
    for (char& c : out) {
        if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
    }
    return out;
}

CsvSchema schema_for(const DatasetEntry& entry) {
    CsvSchema schema;
    schema.label_column = entry.label_column;
    schema.missing_marker = entry.missing_marker;
    schema.missing_policy = entry.missing_policy == "impute"
                                ? MissingPolicy::Impute
                                : MissingPolicy::Drop;
    schema.delimiter = entry.delimiter == "ws" ? '\0' : entry.delimiter[0];
    schema.drop_columns = entry.drop_columns;
    schema.skip_rows = entry.skip_rows;
    schema.source_id = entry.id;
    return schema;
}

std::vector<KernelChoice> kernels_or_default(const Grids& grids) {
    if (!grids.svm_kernels.empty()) return grids.svm_kernels;
    KernelChoice fallback;
    fallback.spec = svm::KernelSpec::rbf(1.0);
    fallback.gamma_auto = true;
    return {fallback};
}

svm::KernelSpec resolve_kernel(const KernelChoice& choice,
                               const Eigen::MatrixXd& fit_features) {
    svm::KernelSpec spec = choice.spec;
    if (choice.gamma_auto && spec.kind == svm::KernelSpec::Kind::Rbf) {
        spec.gamma = svm::auto_gamma(fit_features);
    }
    return spec;
}

double elapsed_s(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start)
        .count();
}

struct Aggregate {
    double sum = 0.0;
    double sumsq = 0.0;
    int count = 0;

    void add(double v) {
        sum += v;
        sumsq += v * v;
        ++count;
    }
    double mean() const { return count ? sum / count : 0.0; }
    double stddev() const {
        if (count < 2) return 0.0;
        double m = mean();
        double var = (sumsq - count * m * m) / (count - 1);
        return std::sqrt(std::max(0.0, var));
    }
};

}  // namespace

Evaluation evaluate(const std::vector<int>& predicted,
                    const std::vector<int>& truth, int num_classes) {
    if (predicted.size() != truth.size()) {
        throw ValidationError("evaluate: prediction and truth lengths differ");
    }
    if (predicted.empty()) {
        throw ValidationError("evaluate: empty prediction set");
    }
    Evaluation out;
    out.confusion = Eigen::MatrixXi::Zero(num_classes, num_classes);
    int correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= num_classes || predicted[i] < 0 ||
            predicted[i] >= num_classes) {
            throw ValidationError("evaluate: label out of range");
        }
        out.confusion(truth[i], predicted[i]) += 1;
        if (truth[i] == predicted[i]) ++correct;
    }
    out.accuracy = static_cast<double>(correct) / truth.size();
    return out;
}

BenchManifest parse_manifest(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("manifest: ") + e.what());
    }

    BenchManifest manifest;
    try {
        if (!doc.contains("datasets") || !doc["datasets"].is_array()) {
            throw ConfigError("manifest: 'datasets' array is required");
        }
        for (const auto& d : doc["datasets"]) {
            DatasetEntry entry;
            entry.id = d.at("id").get<std::string>();
            entry.path = d.at("path").get<std::string>();
            if (d.contains("label_column")) {
                entry.label_column = d["label_column"].get<int>();
            }
            if (d.contains("missing_marker")) {
                entry.missing_marker = d["missing_marker"].get<std::string>();
            }
            if (d.contains("missing_policy")) {
                entry.missing_policy = d["missing_policy"].get<std::string>();
            }
            if (d.contains("delimiter")) {
                entry.delimiter = d["delimiter"].get<std::string>();
            }
            if (d.contains("drop_columns")) {
                entry.drop_columns = d["drop_columns"].get<std::vector<int>>();
            }
            if (d.contains("skip_rows")) {
                entry.skip_rows = d["skip_rows"].get<int>();
            }
            manifest.datasets.push_back(std::move(entry));
        }
        if (doc.contains("protocol")) {
            const auto& p = doc["protocol"];
            if (p.contains("test_fraction")) {
                manifest.protocol.test_fraction = p["test_fraction"].get<double>();
            }
            if (p.contains("seed")) {
                manifest.protocol.seed = p["seed"].get<std::uint64_t>();
            }
            if (p.contains("folds")) manifest.protocol.folds = p["folds"].get<int>();
            if (p.contains("repeats")) {
                manifest.protocol.repeats = p["repeats"].get<int>();
            }
        }
        if (doc.contains("grids")) {
            const auto& g = doc["grids"];
            if (g.contains("knn_k")) {
                manifest.grids.knn_k = g["knn_k"].get<std::vector<int>>();
            }
            if (g.contains("enn_k")) {
                manifest.grids.enn_k = g["enn_k"].get<std::vector<int>>();
            }
            if (g.contains("svm_c")) {
                manifest.grids.svm_c = g["svm_c"].get<std::vector<double>>();
            }
            if (g.contains("svm_kernels")) {
                for (const auto& k : g["svm_kernels"]) {
                    KernelChoice choice;
                    const std::string kind = k.at("kind").get<std::string>();
                    if (kind == "linear") {
                        choice.spec = svm::KernelSpec::linear();
                    } else if (kind == "poly") {
                        choice.spec = svm::KernelSpec::polynomial(
                            k.value("degree", 3), k.value("coef0", 0.0));
                    } else if (kind == "rbf") {
                        if (k.contains("gamma") && k["gamma"].is_string()) {
                            if (k["gamma"].get<std::string>() != "auto") {
                                throw ConfigError(
                                    "manifest: rbf gamma must be a number or "
                                    "\"auto\"");
                            }
                            choice.spec = svm::KernelSpec::rbf(1.0);
                            choice.gamma_auto = true;
                        } else {
                            choice.spec =
                                svm::KernelSpec::rbf(k.value("gamma", 1.0));
                        }
                    } else {
                        throw ConfigError("manifest: unknown kernel kind '" +
                                          kind + "'");
                    }
                    manifest.grids.svm_kernels.push_back(choice);
                }
            }
            if (g.contains("lmnn_k_t")) {
                manifest.grids.lmnn_k_t = g["lmnn_k_t"].get<std::vector<int>>();
            }
            if (g.contains("lmnn_mu")) {
                manifest.grids.lmnn_mu = g["lmnn_mu"].get<std::vector<double>>();
            }
            if (g.contains("lmnn_max_iter")) {
                manifest.grids.lmnn_max_iter = g["lmnn_max_iter"].get<int>();
            }
            if (g.contains("lmnn_tol")) {
                manifest.grids.lmnn_tol = g["lmnn_tol"].get<double>();
            }
        }
        if (doc.contains("output_dir")) {
            manifest.output_dir = doc["output_dir"].get<std::string>();
        }
        if (doc.contains("reference")) {
            for (const auto& [dataset, entries] : doc["reference"].items()) {
                for (const auto& [algo, value] : entries.items()) {
                    manifest.reference[dataset][algo] = value.get<double>();
                }
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("manifest: ") + e.what());
    }
    return manifest;
}

BenchManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in.is_open()) throw IoError("cannot open manifest " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    BenchManifest manifest = parse_manifest(buffer.str());
    validate_manifest(manifest, false);
    return manifest;
}

void validate_manifest(const BenchManifest& manifest, bool check_files) {
    if (manifest.datasets.empty()) {
        throw ConfigError("manifest: no datasets listed");
    }
    std::vector<std::string> ids;
    for (const auto& d : manifest.datasets) {
        if (d.id.empty()) throw ConfigError("manifest: dataset with empty id");
        if (d.path.empty()) {
            throw ConfigError("manifest: dataset '" + d.id + "' has no path");
        }
        if (std::find(ids.begin(), ids.end(), d.id) != ids.end()) {
            throw ConfigError("manifest: duplicate dataset id '" + d.id + "'");
        }
        ids.push_back(d.id);
        if (d.missing_policy != "drop" && d.missing_policy != "impute") {
            throw ConfigError("manifest: dataset '" + d.id +
                              "': missing_policy must be drop or impute");
        }
        if (d.delimiter != "ws" && d.delimiter.size() != 1) {
            throw ConfigError("manifest: dataset '" + d.id +
                              "': delimiter must be one character or \"ws\"");
        }
        if (d.skip_rows < 0) {
            throw ConfigError("manifest: dataset '" + d.id +
                              "': skip_rows must be non-negative");
        }
    }
    const auto& p = manifest.protocol;
    if (!(p.test_fraction > 0.0 && p.test_fraction < 1.0)) {
        throw ConfigError("manifest: test_fraction must lie in (0, 1)");
    }
    if (p.folds < 2) throw ConfigError("manifest: folds must be at least 2");
    if (p.repeats < 1) throw ConfigError("manifest: repeats must be at least 1");
    const auto& g = manifest.grids;
    if (g.knn_k.empty() || g.enn_k.empty() || g.svm_c.empty() ||
        g.lmnn_k_t.empty() || g.lmnn_mu.empty()) {
        throw ConfigError("manifest: every hyperparameter grid must be non-empty");
    }
    for (int k : g.knn_k) {
        if (k < 1) throw ConfigError("manifest: knn_k entries must be >= 1");
    }
    for (int k : g.enn_k) {
        if (k < 1) throw ConfigError("manifest: enn_k entries must be >= 1");
    }
    for (double c : g.svm_c) {
        if (!(c > 0.0)) throw ConfigError("manifest: svm_c entries must be > 0");
    }
    for (const auto& choice : g.svm_kernels) {
        if (choice.spec.kind == svm::KernelSpec::Kind::Rbf &&
            !choice.gamma_auto && !(choice.spec.gamma > 0.0)) {
            throw ConfigError("manifest: rbf gamma must be positive");
        }
        if (choice.spec.kind == svm::KernelSpec::Kind::Polynomial &&
            choice.spec.degree < 1) {
            throw ConfigError("manifest: polynomial degree must be >= 1");
        }
    }
    for (int k : g.lmnn_k_t) {
        if (k < 1) throw ConfigError("manifest: lmnn_k_t entries must be >= 1");
    }
    for (double mu : g.lmnn_mu) {
        if (!(mu > 0.0 && mu < 1.0)) {
            throw ConfigError("manifest: lmnn_mu entries must lie in (0, 1)");
        }
    }
    if (g.lmnn_max_iter < 1) {
        throw ConfigError("manifest: lmnn_max_iter must be >= 1");
    }
    if (!(g.lmnn_tol > 0.0)) throw ConfigError("manifest: lmnn_tol must be > 0");

    if (check_files) {
        std::vector<std::string> missing;
        for (const auto& d : manifest.datasets) {
            if (!std::filesystem::exists(d.path)) missing.push_back(d.path);
        }
        if (!missing.empty()) {
            std::string joined;
            for (const auto& m : missing) {
                if (!joined.empty()) joined += ", ";
                joined += m;
            }
            throw IoError("manifest: missing dataset files: " + joined);
        }
    }
}

namespace {

// Pooled cross-validation accuracy: total correct over total validated.
struct CvScore {
    long correct = 0;
    long total = 0;
    double value() const {
        return total ? static_cast<double>(correct) / total : -1.0;
    }
};

int count_correct(const std::vector<int>& predicted,
                  const std::vector<int>& truth) {
    int correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (predicted[i] == truth[i]) ++correct;
    }
    return correct;
}

}  // namespace

std::vector<EvalReport> run_cells_on_split(
    const std::string& dataset_id, const Dataset& train, const Dataset& test,
    const Grids& grids, const Protocol& protocol, std::uint64_t split_seed,
    int repeat, SelectionLog* log, std::vector<std::string>* notes,
    Eigen::MatrixXd* learned_metric) {
    auto note = [&](const std::string& text) {
        if (notes) notes->push_back(dataset_id + ": " + text);
    };

    // Imputation and normalization are fit on the training portion only; the
    // test portion is transformed with those parameters and otherwise left
    // untouched until the final evaluation.
    Dataset train_full = train;
    Dataset test_full = test;
    if (train.has_missing() || test.has_missing()) {
        ImputeParams imputer = fit_imputer(train);
        train_full = apply_imputer(imputer, train, true);
        test_full = apply_imputer(imputer, test, false);
    }
    NormalizationParams norm = fit_normalizer(train_full);
    Dataset train_n = apply_normalizer(norm, train_full);
    Dataset test_n = apply_normalizer(norm, test_full);
    if (log) {
        log->norm_mean = norm.mean;
        log->norm_std = norm.stddev;
    }

    const int num_classes = train_n.num_classes();
    const int n_train = static_cast<int>(train_n.rows());
    int min_class = n_train;
    for (int c : train_n.class_counts()) min_class = std::min(min_class, c);

    int folds_eff = std::min(protocol.folds, min_class);
    std::vector<Fold> folds;
    if (folds_eff >= 2) {
        folds = kfold(train_n, folds_eff, fold_seed(dataset_id, split_seed));
        if (folds_eff < protocol.folds && repeat == 0) {
            note("folds clamped to " + std::to_string(folds_eff) +
                 " (smallest class has " + std::to_string(min_class) +
                 " training samples)");
        }
    } else if (repeat == 0) {
        note("cross-validation skipped (smallest class has " +
             std::to_string(min_class) + " training samples); first grid "
             "point used");
    }

    int min_fold_train = n_train;
    for (const auto& fold : folds) {
        min_fold_train =
            std::min(min_fold_train, static_cast<int>(fold.train.rows()));
    }

    std::vector<EvalReport> reports;
    auto push_report = [&](const std::string& algo, const std::string& params,
                           const Evaluation& eval, double seconds,
                           bool converged) {
        EvalReport r;
        r.dataset_id = dataset_id;
        r.algorithm = algo;
        r.params = params;
        r.seed = split_seed;
        r.repeat = repeat;
        r.accuracy = eval.accuracy;
        r.confusion = eval.confusion;
        r.wall_time_s = seconds;
        r.converged = converged;
        reports.push_back(std::move(r));
    };

    // ---- KNN ----------------------------------------------------------
    auto knn_start = std::chrono::steady_clock::now();
    int knn_k = std::min(grids.knn_k.front(), n_train);
    if (!folds.empty()) {
        CvScore best;
        for (int k : grids.knn_k) {
            if (k > min_fold_train) continue;
            CvScore score;
            for (const auto& fold : folds) {
                KnnModel model(fold.train, k);
                auto predicted = knn_predict_batch(model, fold.validation.features);
                score.correct += count_correct(predicted, fold.validation.labels);
                score.total += static_cast<long>(fold.validation.rows());
            }
            if (score.value() > best.value()) {
                best = score;
                knn_k = k;
            }
        }
    }
    KnnModel knn_final(train_n, knn_k);
    Evaluation knn_eval = evaluate(knn_predict_batch(knn_final, test_n.features),
                                   test_n.labels, num_classes);
    push_report("KNN", "k=" + std::to_string(knn_k), knn_eval,
                elapsed_s(knn_start), true);
    if (log) log->knn_k = knn_k;

    // ---- ENN ----------------------------------------------------------
    auto enn_start = std::chrono::steady_clock::now();
    int enn_k = std::min(grids.enn_k.front(), n_train - 1);
    enn_k = std::max(enn_k, 1);
    if (!folds.empty()) {
        int k_cap = min_fold_train - 1;
        int k_max = 0;
        for (int k : grids.enn_k) {
            if (k <= k_cap) k_max = std::max(k_max, k);
        }
        if (k_max >= 1) {
            CvScore best;
            // One neighbor table per fold at the largest k, truncated down.
            std::vector<enn::ClasswiseStats> tables;
            tables.reserve(folds.size());
            for (const auto& fold : folds) {
                tables.push_back(enn::classwise_statistics(
                    fold.train, k_max, DistanceMetric::euclidean()));
            }
            for (int k : grids.enn_k) {
                if (k > k_cap) continue;
                CvScore score;
                for (std::size_t f = 0; f < folds.size(); ++f) {
                    enn::ClasswiseStats stats = enn::truncate(tables[f], k);
                    std::vector<int> predicted;
                    predicted.reserve(
                        static_cast<std::size_t>(folds[f].validation.rows()));
                    for (Eigen::Index r = 0; r < folds[f].validation.rows();
                         ++r) {
                        predicted.push_back(
                            enn::predict_incremental(
                                stats, folds[f].train,
                                DistanceMetric::euclidean(),
                                folds[f].validation.features.row(r).transpose())
                                .label);
                    }
                    score.correct +=
                        count_correct(predicted, folds[f].validation.labels);
                    score.total +=
                        static_cast<long>(folds[f].validation.rows());
                }
                if (score.value() > best.value()) {
                    best = score;
                    enn_k = k;
                }
            }
        }
    }
    enn::EnnClassifier enn_final(train_n, enn_k);
    Evaluation enn_eval = evaluate(enn_final.predict_batch(test_n.features),
                                   test_n.labels, num_classes);
    push_report("ENN", "k=" + std::to_string(enn_k), enn_eval,
                elapsed_s(enn_start), true);
    if (log) log->enn_k = enn_k;

    // ---- SVM ----------------------------------------------------------
    auto svm_start = std::chrono::steady_clock::now();
    // A hard sweep cap so one stubborn dataset cannot stall a whole run;
    // hitting it surfaces as converged=false in the results.
    svm::SolveOptions svm_options;
    svm_options.max_passes = 3000;
    const std::vector<KernelChoice> kernels = kernels_or_default(grids);
    double svm_c = grids.svm_c.front();
    std::size_t svm_kernel_index = 0;
    if (!folds.empty() && (grids.svm_c.size() > 1 || kernels.size() > 1)) {
        CvScore best;
        for (double c : grids.svm_c) {
            for (std::size_t ki = 0; ki < kernels.size(); ++ki) {
                CvScore score;
                for (const auto& fold : folds) {
                    svm::KernelSpec spec =
                        resolve_kernel(kernels[ki], fold.train.features);
                    auto model =
                        svm::fit_multiclass(fold.train, c, spec, svm_options);
                    auto predicted = svm::predict_multiclass_batch(
                        model, fold.validation.features);
                    score.correct +=
                        count_correct(predicted, fold.validation.labels);
                    score.total += static_cast<long>(fold.validation.rows());
                }
                if (score.value() > best.value()) {
                    best = score;
                    svm_c = c;
                    svm_kernel_index = ki;
                }
            }
        }
    }
    svm::KernelSpec svm_spec =
        resolve_kernel(kernels[svm_kernel_index], train_n.features);
    svm::MulticlassSvm svm_final =
        svm::fit_multiclass(train_n, svm_c, svm_spec, svm_options);
    Evaluation svm_eval =
        evaluate(svm::predict_multiclass_batch(svm_final, test_n.features),
                 test_n.labels, num_classes);
    push_report("SVM",
                "C=" + fmt_number(svm_c) + ",kernel=" + svm_spec.describe(),
                svm_eval, elapsed_s(svm_start), svm_final.all_converged);
    if (log) {
        log->svm_c = svm_c;
        log->svm_kernel = svm_spec.describe();
    }

    // ---- LMNN ---------------------------------------------------------
    auto lmnn_start = std::chrono::steady_clock::now();
    int lmnn_k_t = grids.lmnn_k_t.front();
    double lmnn_mu = grids.lmnn_mu.front();
    const bool lmnn_grid = grids.lmnn_k_t.size() > 1 || grids.lmnn_mu.size() > 1;
    if (!folds.empty() && lmnn_grid) {
        CvScore best;
        for (int k_t : grids.lmnn_k_t) {
            for (double mu : grids.lmnn_mu) {
                CvScore score;
                for (const auto& fold : folds) {
                    lmnn::LmnnConfig config;
                    config.k_t = k_t;
                    config.mu = mu;
                    config.max_iter = grids.lmnn_max_iter;
                    config.tol = grids.lmnn_tol;
                    auto model = lmnn::fit(fold.train, config);
                    KnnModel knn(fold.train,
                                 std::min(knn_k,
                                          static_cast<int>(fold.train.rows())),
                                 lmnn::export_metric(model));
                    auto predicted =
                        knn_predict_batch(knn, fold.validation.features);
                    score.correct +=
                        count_correct(predicted, fold.validation.labels);
                    score.total += static_cast<long>(fold.validation.rows());
                }
                if (score.value() > best.value()) {
                    best = score;
                    lmnn_k_t = k_t;
                    lmnn_mu = mu;
                }
            }
        }
    }
    lmnn::LmnnConfig lmnn_config;
    lmnn_config.k_t = lmnn_k_t;
    lmnn_config.mu = lmnn_mu;
    lmnn_config.max_iter = grids.lmnn_max_iter;
    lmnn_config.tol = grids.lmnn_tol;
    lmnn::MetricModel lmnn_model = lmnn::fit(train_n, lmnn_config);
    KnnModel lmnn_knn(train_n, knn_k, lmnn::export_metric(lmnn_model));
    Evaluation lmnn_eval =
        evaluate(knn_predict_batch(lmnn_knn, test_n.features), test_n.labels,
                 num_classes);
    push_report("LMNN",
                "k_t=" + std::to_string(lmnn_model.targets.k_t) +
                    ",mu=" + fmt_number(lmnn_mu) +
                    ",knn_k=" + std::to_string(knn_k),
                lmnn_eval, elapsed_s(lmnn_start), lmnn_model.converged);
    if (log) {
        log->lmnn_k_t = lmnn_model.targets.k_t;
        log->lmnn_mu = lmnn_mu;
    }
    if (learned_metric) *learned_metric = lmnn_model.m;

    return reports;
}

namespace {

struct JobOutput {
    std::vector<EvalReport> reports;
    std::vector<std::string> notes;
    std::optional<DiagnosticReport> diagnostic;
    std::optional<Eigen::MatrixXd> metric;
    std::optional<std::string> error;
};

Dataset prepare_for_model(const Dataset& raw) {
    Dataset out = raw;
    if (raw.has_missing()) {
        ImputeParams imputer = fit_imputer(raw);
        out = apply_imputer(imputer, raw, true);
    }
    NormalizationParams norm = fit_normalizer(out);
    return apply_normalizer(norm, out);
}

}  // namespace

BenchResult run(const BenchManifest& manifest, const BenchOptions& options) {
    validate_manifest(manifest, false);
    BenchResult result;

    // Load every dataset once; a missing or malformed file is a per-dataset
    // error and the rest of the run proceeds.
    std::vector<std::optional<Dataset>> loaded(manifest.datasets.size());
    for (std::size_t i = 0; i < manifest.datasets.size(); ++i) {
        const auto& entry = manifest.datasets[i];
        try {
            loaded[i] = load_csv(entry.path, schema_for(entry));
        } catch (const std::exception& e) {
            result.dataset_errors.push_back(entry.id + ": " + e.what());
        }
    }

    struct JobSpec {
        std::size_t dataset_index;
        int repeat;
    };
    std::vector<JobSpec> jobs;
    for (std::size_t i = 0; i < manifest.datasets.size(); ++i) {
        if (!loaded[i]) continue;
        for (int rep = 0; rep < manifest.protocol.repeats; ++rep) {
            jobs.push_back({i, rep});
        }
    }

    std::vector<JobOutput> outputs(jobs.size());
    std::atomic<std::size_t> next{0};
    std::mutex io_mutex;

    auto worker = [&]() {
        while (true) {
            std::size_t job_index = next.fetch_add(1);
            if (job_index >= jobs.size()) break;
            const JobSpec& job = jobs[job_index];
            const auto& entry = manifest.datasets[job.dataset_index];
            const Dataset& data = *loaded[job.dataset_index];
            JobOutput& out = outputs[job_index];
            try {
                SplitSpec spec;
                spec.test_fraction = manifest.protocol.test_fraction;
                spec.seed = manifest.protocol.seed +
                            static_cast<std::uint64_t>(job.repeat);
                spec.stratified = true;
                SplitIndices idx =
                    split_indices(data.labels, data.num_classes(), spec);
                Dataset train = take(data, idx.train);
                Dataset test = take(data, idx.test);

                const bool want_metric =
                    job.repeat == 0 &&
                    (options.eval_on_train || options.dump_metrics);
                SelectionLog log;
                Eigen::MatrixXd metric;
                out.reports = run_cells_on_split(
                    entry.id, train, test, manifest.grids, manifest.protocol,
                    spec.seed, job.repeat, job.repeat == 0 ? &log : nullptr,
                    &out.notes, want_metric ? &metric : nullptr);

                if (want_metric) out.metric = metric;
                if (job.repeat == 0 && options.eval_on_train) {
                    Dataset train_n = prepare_for_model(train);
                    KnnModel memorizer(train_n, 1,
                                       DistanceMetric::mahalanobis(metric));
                    auto predicted =
                        knn_predict_batch(memorizer, train_n.features);
                    Evaluation eval =
                        evaluate(predicted, train_n.labels, train_n.num_classes());
                    out.diagnostic = DiagnosticReport{
                        entry.id, "DIAGNOSTIC: LMNN-metric 1-NN on train",
                        eval.accuracy};
                }
            } catch (const std::exception& e) {
                out.error = entry.id + " (repeat " +
                            std::to_string(job.repeat) + "): " + e.what();
            }
            if (options.verbose) {
                std::lock_guard<std::mutex> lock(io_mutex);
                std::cerr << "[bench] " << entry.id << " repeat " << job.repeat
                          << (out.error ? " FAILED" : " done") << "\n";
            }
        }
    };

    int thread_count = std::max(1, options.jobs);
    thread_count =
        std::min<int>(thread_count, static_cast<int>(std::max<std::size_t>(
                                        1, jobs.size())));
    if (thread_count <= 1 || jobs.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(thread_count);
        for (int t = 0; t < thread_count; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    // Canonical order: manifest dataset order, then repeat, then algorithm.
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        JobOutput& out = outputs[j];
        if (out.error) {
            result.dataset_errors.push_back(*out.error);
            continue;
        }
        result.reports.insert(result.reports.end(), out.reports.begin(),
                              out.reports.end());
        result.notes.insert(result.notes.end(), out.notes.begin(),
                            out.notes.end());
        if (out.diagnostic) result.diagnostics.push_back(*out.diagnostic);
        if (out.metric && options.dump_metrics) {
            result.learned_metrics[manifest.datasets[jobs[j].dataset_index].id] =
                *out.metric;
        }
    }
    return result;
}

namespace {

struct CellStats {
    std::map<std::string, std::map<std::string, Aggregate>> cells;

    void add(const EvalReport& report) {
        cells[report.dataset_id][report.algorithm].add(report.accuracy);
    }
    const Aggregate* find(const std::string& dataset,
                          const std::string& algo) const {
        auto d = cells.find(dataset);
        if (d == cells.end()) return nullptr;
        auto a = d->second.find(algo);
        if (a == d->second.end()) return nullptr;
        return &a->second;
    }
};

}  // namespace

std::string render_table(const BenchManifest& manifest,
                         const BenchResult& result) {
    CellStats stats;
    for (const auto& report : result.reports) stats.add(report);

    std::ostringstream out;
    out << "# Benchmark accuracies\n\n";
    out << "Mean test accuracy over " << manifest.protocol.repeats
        << " repeat(s); " << fmt_number(manifest.protocol.test_fraction * 100)
        << "% held out per repeat.\n\n";
    out << "| Datasets | KNN | ENN | SVM | LMNN |\n";
    out << "|---|---|---|---|---|\n";
    for (const auto& entry : manifest.datasets) {
        out << "| " << entry.id << " |";
        for (const char* algo : kAlgorithms) {
            const Aggregate* cell = stats.find(entry.id, algo);
            if (!cell || cell->count == 0) {
                out << " — |";
            } else {
                out << " " << fmt_fixed(cell->mean(), 4) << " ± "
                    << fmt_fixed(cell->stddev(), 4) << " |";
            }
        }
        out << "\n";
    }

    if (!manifest.reference.empty()) {
        out << "\n## Reference deltas\n\n";
        out << "Mean accuracy minus the reference value; cells beyond ±0.05 "
               "are marked with *.\n\n";
        out << "| Datasets | KNN | ENN | SVM | LMNN |\n";
        out << "|---|---|---|---|---|\n";
        for (const auto& entry : manifest.datasets) {
            out << "| " << entry.id << " |";
            auto ref_row = manifest.reference.find(entry.id);
            for (const char* algo : kAlgorithms) {
                const Aggregate* cell = stats.find(entry.id, algo);
                double ref = 0.0;
                bool have_ref = false;
                if (ref_row != manifest.reference.end()) {
                    auto r = ref_row->second.find(algo);
                    if (r != ref_row->second.end()) {
                        ref = r->second;
                        have_ref = true;
                    }
                }
                if (!cell || cell->count == 0 || !have_ref) {
                    out << " — |";
                } else {
                    double delta = cell->mean() - ref;
                    out << " " << (delta >= 0 ? "+" : "")
                        << fmt_fixed(delta, 4)
                        << (std::abs(delta) > 0.05 ? " *" : "") << " |";
                }
            }
            out << "\n";
        }
    }

    if (!result.diagnostics.empty()) {
        out << "\n## Diagnostics\n\n";
        for (const auto& diag : result.diagnostics) {
            out << "- " << diag.dataset_id << ": " << diag.label << " = "
                << fmt_fixed(diag.accuracy, 4) << "\n";
        }
    }
    if (!result.notes.empty()) {
        out << "\n## Notes\n\n";
        for (const auto& n : result.notes) out << "- " << n << "\n";
    }
    if (!result.dataset_errors.empty()) {
        out << "\n## Errors\n\n";
        for (const auto& e : result.dataset_errors) out << "- " << e << "\n";
    }
    return out.str();
}

void emit(const BenchManifest& manifest, const BenchResult& result,
          const std::string& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) {
        throw IoError("cannot create output directory " + out_dir + ": " +
                      ec.message());
    }

    auto open_for_write = [&](const std::string& name) {
        std::ofstream file(out_dir + "/" + name, std::ios::binary);
        if (!file.is_open()) {
            throw IoError("cannot write " + out_dir + "/" + name);
        }
        return file;
    };

    {
        // wall_time_s stays empty here so the file is byte-identical across
        // runs; timings.csv carries the measured values.
        auto file = open_for_write("results.csv");
        file << "dataset,algorithm,params,seed,accuracy,wall_time_s,converged\n";
        for (const auto& r : result.reports) {
            file << r.dataset_id << ',' << r.algorithm << ",\"" << r.params
                 << "\"," << r.seed << ',' << fmt_fixed(r.accuracy, 6) << ",,"
                 << (r.converged ? "true" : "false") << '\n';
        }
    }
    {
        auto file = open_for_write("timings.csv");
        file << "dataset,algorithm,repeat,wall_time_s\n";
        for (const auto& r : result.reports) {
            file << r.dataset_id << ',' << r.algorithm << ',' << r.repeat << ','
                 << fmt_fixed(r.wall_time_s, 3) << '\n';
        }
    }
    {
        CellStats stats;
        for (const auto& report : result.reports) stats.add(report);
        auto file = open_for_write("fig5.csv");
        file << "dataset,algorithm,accuracy\n";
        for (const auto& entry : manifest.datasets) {
            for (const char* algo : kAlgorithms) {
                const Aggregate* cell = stats.find(entry.id, algo);
                if (!cell || cell->count == 0) continue;
                file << entry.id << ',' << algo << ','
                     << fmt_fixed(cell->mean(), 6) << '\n';
            }
        }
    }
    {
        auto file = open_for_write("table.md");
        file << render_table(manifest, result);
    }
    {
        ordered_json info;
        info["protocol"] = {{"test_fraction", manifest.protocol.test_fraction},
                            {"seed", manifest.protocol.seed},
                            {"folds", manifest.protocol.folds},
                            {"repeats", manifest.protocol.repeats}};
        ordered_json datasets = ordered_json::array();
        for (const auto& entry : manifest.datasets) {
            datasets.push_back({{"id", entry.id}, {"path", entry.path}});
        }
        info["datasets"] = datasets;
        info["reports"] = result.reports.size();
        info["notes"] = result.notes;
        info["errors"] = result.dataset_errors;
        ordered_json diags = ordered_json::array();
        for (const auto& diag : result.diagnostics) {
            diags.push_back({{"dataset", diag.dataset_id},
                             {"label", diag.label},
                             {"accuracy", diag.accuracy}});
        }
        info["diagnostics"] = diags;
        auto file = open_for_write("run_info.json");
        file << info.dump(2) << '\n';
    }
    if (!result.diagnostics.empty()) {
        auto file = open_for_write("diagnostics.csv");
        file << "dataset,label,accuracy\n";
        for (const auto& diag : result.diagnostics) {
            file << diag.dataset_id << ",\"" << diag.label << "\","
                 << fmt_fixed(diag.accuracy, 6) << '\n';
        }
    }
    for (const auto& [dataset, metric] : result.learned_metrics) {
        lmnn::save_metric_csv(out_dir + "/metric_" + sanitize_id(dataset) +
                                  ".csv",
                              metric);
    }
}

}  // namespace ml::bench
