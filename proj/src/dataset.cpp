#include "ml/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string_view>
#include <unordered_map>

namespace ml {

namespace {

bool parse_finite_double(std::string_view input, double& out) {
    double parsed = 0.0;
    const char* begin = input.data();
    const char* end = begin + input.size();
    auto [ptr, ec] = std::from_chars(begin, end, parsed, std::chars_format::general);
    if (ec != std::errc{} || ptr != end || !std::isfinite(parsed)) {
        return false;
    }
    out = parsed;
    return true;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

std::vector<std::string> split_line(const std::string& line, char delimiter) {
    std::vector<std::string> cells;
    if (delimiter == '\0') {
        std::istringstream in(line);
        std::string token;
        while (in >> token) cells.push_back(token);
        return cells;
    }
    std::string_view rest(line);
    while (true) {
        auto pos = rest.find(delimiter);
        if (pos == std::string_view::npos) {
            cells.emplace_back(trim(rest));
            break;
        }
        cells.emplace_back(trim(rest.substr(0, pos)));
        rest.remove_prefix(pos + 1);
    }
    return cells;
}

struct ColumnLayout {
    std::size_t arity = 0;
    std::size_t label = 0;
    std::vector<std::size_t> feature_cols;
};

ColumnLayout resolve_columns(std::size_t arity, const CsvSchema& schema,
                             const std::string& path) {
    ColumnLayout layout;
    layout.arity = arity;
    long label = schema.label_column;
    if (label < 0) label += static_cast<long>(arity);
    if (label < 0 || label >= static_cast<long>(arity)) {
        throw ConfigError(path + ": label column " +
                          std::to_string(schema.label_column) +
                          " out of range for " + std::to_string(arity) +
                          " columns");
    }
    layout.label = static_cast<std::size_t>(label);

    std::vector<bool> dropped(arity, false);
    for (int raw : schema.drop_columns) {
        long c = raw < 0 ? raw + static_cast<long>(arity) : raw;
        if (c < 0 || c >= static_cast<long>(arity)) {
            throw ConfigError(path + ": drop column " + std::to_string(raw) +
                              " out of range");
        }
        if (static_cast<std::size_t>(c) == layout.label) {
            throw ConfigError(path + ": drop column collides with label column");
        }
        dropped[static_cast<std::size_t>(c)] = true;
    }
    for (std::size_t c = 0; c < arity; ++c) {
        if (c != layout.label && !dropped[c]) layout.feature_cols.push_back(c);
    }
    if (layout.feature_cols.empty()) {
        throw ConfigError(path + ": no feature columns remain");
    }
    return layout;
}

bool looks_like_header(const std::vector<std::string>& cells,
                       const ColumnLayout& layout, const CsvSchema& schema) {
    for (std::size_t c : layout.feature_cols) {
        const std::string& cell = cells[c];
        if (cell == schema.missing_marker) continue;
        double ignored;
        if (!parse_finite_double(cell, ignored)) return true;
    }
    return false;
}

}  // namespace

std::vector<int> Dataset::class_counts() const {
    std::vector<int> counts(class_names.size(), 0);
    for (int label : labels) {
        if (label >= 0 && label < static_cast<int>(counts.size())) ++counts[label];
    }
    return counts;
}

bool Dataset::has_missing() const { return features.hasNaN(); }

void Dataset::validate(bool allow_missing) const {
    if (rows() < 1) throw ValidationError(source_id + ": dataset is empty");
    if (dims() < 1) throw ValidationError(source_id + ": dataset has no features");
    if (num_classes() < 2) {
        throw ValidationError(source_id + ": needs at least 2 classes, found " +
                              std::to_string(num_classes()));
    }
    if (static_cast<Eigen::Index>(labels.size()) != rows()) {
        throw ValidationError(source_id + ": label count does not match row count");
    }
    for (int label : labels) {
        if (label < 0 || label >= num_classes()) {
            throw ValidationError(source_id + ": label out of range");
        }
    }
    auto counts = class_counts();
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] == 0) {
            throw ValidationError(source_id + ": class '" + class_names[i] +
                                  "' has no samples");
        }
    }
    for (Eigen::Index r = 0; r < features.rows(); ++r) {
        for (Eigen::Index c = 0; c < features.cols(); ++c) {
            double v = features(r, c);
            if (std::isnan(v)) {
                if (!allow_missing) {
                    throw ValidationError(source_id + ": NaN feature at row " +
                                          std::to_string(r));
                }
            } else if (!std::isfinite(v)) {
                throw ValidationError(source_id + ": non-finite feature at row " +
                                      std::to_string(r));
            }
        }
    }
}

Dataset load_csv(const std::string& path, const CsvSchema& schema,
                 LoadStats* stats) {
    std::ifstream file(path, std::ios::binary);
    if (!file.is_open()) throw IoError("cannot open " + path);

    LoadStats local;
    std::vector<std::vector<double>> rows;
    std::vector<std::string> raw_labels;
    std::vector<std::string> feature_names;

    ColumnLayout layout;
    bool layout_known = false;
    const bool keep_missing = schema.missing_policy == MissingPolicy::Impute;

    std::string line;
    std::size_t line_no = 0;
    int to_skip = schema.skip_rows;
    bool first_content_row = true;

    while (std::getline(file, line)) {
        ++line_no;
        if (line_no == 1 && line.size() >= 3 && line[0] == '\xEF' &&
            line[1] == '\xBB' && line[2] == '\xBF') {
            line.erase(0, 3);
        }
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        if (to_skip > 0) {
            --to_skip;
            continue;
        }

        std::vector<std::string> cells = split_line(line, schema.delimiter);

        if (!layout_known) {
            layout = resolve_columns(cells.size(), schema, path);
            layout_known = true;
        }
        if (cells.size() != layout.arity) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(layout.arity) + " columns, got " +
                             std::to_string(cells.size()));
        }

        if (first_content_row) {
            first_content_row = false;
            if (looks_like_header(cells, layout, schema)) {
                local.header_detected = true;
                for (std::size_t c : layout.feature_cols) {
                    feature_names.push_back(cells[c]);
                }
                continue;
            }
        }

        bool drop_row = false;
        std::vector<double> row;
        row.reserve(layout.feature_cols.size());
        for (std::size_t c : layout.feature_cols) {
            const std::string& cell = cells[c];
            if (cell == schema.missing_marker) {
                if (keep_missing) {
                    row.push_back(std::numeric_limits<double>::quiet_NaN());
                } else {
                    drop_row = true;
                    break;
                }
                continue;
            }
            double value;
            if (!parse_finite_double(cell, value)) {
                throw ParseError(path + ":" + std::to_string(line_no) +
                                 ": non-numeric feature value '" + cell + "'");
            }
            row.push_back(value);
        }
        const std::string& label_cell = cells[layout.label];
        if (label_cell == schema.missing_marker) drop_row = true;

        if (drop_row) {
            ++local.rows_dropped;
            continue;
        }
        rows.push_back(std::move(row));
        raw_labels.push_back(label_cell);
        ++local.rows_kept;
    }

    if (rows.empty()) {
        throw ValidationError(path + ": no usable rows");
    }

    Dataset data;
    data.source_id = schema.source_id.empty() ? path : schema.source_id;

    // Labels encoded in order of first appearance.
    std::unordered_map<std::string, int> encoding;
    data.labels.reserve(raw_labels.size());
    for (const std::string& raw : raw_labels) {
        auto it = encoding.find(raw);
        if (it == encoding.end()) {
            it = encoding.emplace(raw, static_cast<int>(data.class_names.size())).first;
            data.class_names.push_back(raw);
        }
        data.labels.push_back(it->second);
    }

    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto d = static_cast<Eigen::Index>(rows.front().size());
    data.features.resize(n, d);
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index c = 0; c < d; ++c) data.features(r, c) = rows[r][c];
    }

    if (local.header_detected) {
        data.feature_names = feature_names;
    } else {
        for (Eigen::Index c = 0; c < d; ++c) {
            data.feature_names.push_back("f" + std::to_string(c));
        }
    }

    if (stats) *stats = local;
    data.validate(keep_missing);
    return data;
}

NormalizationParams fit_normalizer(const Dataset& train) {
    if (train.rows() < 1) throw ValidationError("fit_normalizer: empty dataset");
    if (train.has_missing()) {
        throw ValidationError("fit_normalizer: dataset still has missing values");
    }
    NormalizationParams params;
    const auto n = static_cast<double>(train.rows());
    params.mean = train.features.colwise().mean();
    Eigen::MatrixXd centered = train.features.rowwise() - params.mean.transpose();
    params.stddev = (centered.array().square().colwise().sum() / n).sqrt();
    for (Eigen::Index c = 0; c < params.stddev.size(); ++c) {
        if (params.stddev(c) < 1e-12) params.stddev(c) = 1.0;  // constant column
    }
    return params;
}

Dataset apply_normalizer(const NormalizationParams& params, const Dataset& data) {
    if (params.mean.size() != data.dims()) {
        throw ValidationError("apply_normalizer: params fit for " +
                              std::to_string(params.mean.size()) +
                              " features, data has " + std::to_string(data.dims()));
    }
    Dataset out = data;
    out.features = (data.features.rowwise() - params.mean.transpose()).array().rowwise() /
                   params.stddev.transpose().array();
    return out;
}

namespace {

double median_of(std::vector<double>& values, double fallback) {
    if (values.empty()) return fallback;
    std::sort(values.begin(), values.end());
    std::size_t mid = values.size() / 2;
    if (values.size() % 2 == 1) return values[mid];
    return 0.5 * (values[mid - 1] + values[mid]);
}

}  // namespace

ImputeParams fit_imputer(const Dataset& train) {
    if (train.rows() < 1) throw ValidationError("fit_imputer: empty dataset");
    const int num_classes = train.num_classes();
    const Eigen::Index d = train.dims();
    ImputeParams params;
    params.global_median.resize(d);
    params.class_median.resize(num_classes, d);

    for (Eigen::Index c = 0; c < d; ++c) {
        std::vector<double> all;
        std::vector<std::vector<double>> per_class(num_classes);
        for (Eigen::Index r = 0; r < train.rows(); ++r) {
            double v = train.features(r, c);
            if (std::isnan(v)) continue;
            all.push_back(v);
            per_class[train.labels[r]].push_back(v);
        }
        double global = median_of(all, 0.0);
        params.global_median(c) = global;
        for (int cls = 0; cls < num_classes; ++cls) {
            params.class_median(cls, c) = median_of(per_class[cls], global);
        }
    }
    return params;
}

Dataset apply_imputer(const ImputeParams& params, const Dataset& data,
                      bool use_labels) {
    if (params.global_median.size() != data.dims()) {
        throw ValidationError("apply_imputer: dimension mismatch");
    }
    Dataset out = data;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        for (Eigen::Index c = 0; c < out.dims(); ++c) {
            if (!std::isnan(out.features(r, c))) continue;
            out.features(r, c) = use_labels
                                     ? params.class_median(out.labels[r], c)
                                     : params.global_median(c);
        }
    }
    return out;
}

SplitIndices split_indices(const std::vector<int>& labels, int num_classes,
                           const SplitSpec& spec) {
    if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0)) {
        throw ValidationError("split: test_fraction must lie in (0, 1)");
    }
    const int n = static_cast<int>(labels.size());
    std::mt19937_64 rng(spec.seed);
    SplitIndices out;

    if (!spec.stratified) {
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        long test_count = std::lround(n * spec.test_fraction);
        test_count = std::clamp<long>(test_count, 1, n - 1);
        out.test.assign(order.begin(), order.begin() + test_count);
        out.train.assign(order.begin() + test_count, order.end());
    } else {
        std::vector<std::vector<int>> by_class(num_classes);
        for (int i = 0; i < n; ++i) by_class[labels[i]].push_back(i);
        for (int cls = 0; cls < num_classes; ++cls) {
            auto& members = by_class[cls];
            if (members.size() < 2) {
                throw ValidationError("split: class " + std::to_string(cls) +
                                      " has fewer than 2 samples");
            }
            std::shuffle(members.begin(), members.end(), rng);
            long test_count = std::lround(members.size() * spec.test_fraction);
            test_count = std::clamp<long>(test_count, 1,
                                          static_cast<long>(members.size()) - 1);
            out.test.insert(out.test.end(), members.begin(),
                            members.begin() + test_count);
            out.train.insert(out.train.end(), members.begin() + test_count,
                             members.end());
        }
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

std::pair<Dataset, Dataset> split_stratified(const Dataset& data,
                                             const SplitSpec& spec) {
    SplitIndices idx = split_indices(data.labels, data.num_classes(), spec);
    return {take(data, idx.train), take(data, idx.test)};
}

Dataset take(const Dataset& data, const std::vector<int>& indices) {
    Dataset out;
    out.class_names = data.class_names;
    out.feature_names = data.feature_names;
    out.source_id = data.source_id;
    out.features.resize(static_cast<Eigen::Index>(indices.size()), data.dims());
    out.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        int r = indices[i];
        if (r < 0 || r >= data.rows()) {
            throw ValidationError("take: index out of range");
        }
        out.features.row(static_cast<Eigen::Index>(i)) = data.features.row(r);
        out.labels.push_back(data.labels[r]);
    }
    return out;
}

std::vector<FoldIndices> kfold_indices(const std::vector<int>& labels,
                                       int num_classes, int k_folds,
                                       std::uint64_t seed) {
    if (k_folds < 2) throw ValidationError("kfold: needs at least 2 folds");
    std::vector<std::vector<int>> by_class(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        by_class[labels[i]].push_back(static_cast<int>(i));
    }
    for (int cls = 0; cls < num_classes; ++cls) {
        if (static_cast<int>(by_class[cls].size()) < k_folds) {
            throw ValidationError("kfold: class " + std::to_string(cls) + " has " +
                                  std::to_string(by_class[cls].size()) +
                                  " samples, fewer than " +
                                  std::to_string(k_folds) + " folds");
        }
    }

    std::mt19937_64 rng(seed);
    std::vector<std::vector<int>> fold_members(k_folds);
    for (int cls = 0; cls < num_classes; ++cls) {
        auto& members = by_class[cls];
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t i = 0; i < members.size(); ++i) {
            fold_members[i % k_folds].push_back(members[i]);
        }
    }

    std::vector<FoldIndices> folds(k_folds);
    for (int f = 0; f < k_folds; ++f) {
        std::sort(fold_members[f].begin(), fold_members[f].end());
        folds[f].validation = fold_members[f];
        for (int g = 0; g < k_folds; ++g) {
            if (g == f) continue;
            folds[f].train.insert(folds[f].train.end(), fold_members[g].begin(),
                                  fold_members[g].end());
        }
        std::sort(folds[f].train.begin(), folds[f].train.end());
    }
    return folds;
}

std::vector<Fold> kfold(const Dataset& data, int k_folds, std::uint64_t seed) {
    auto indices = kfold_indices(data.labels, data.num_classes(), k_folds, seed);
    std::vector<Fold> folds;
    folds.reserve(indices.size());
    for (const auto& fi : indices) {
        folds.push_back({take(data, fi.train), take(data, fi.validation)});
    }
    return folds;
}

}  // namespace ml
