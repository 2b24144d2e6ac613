#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <string>

#include "ml/dataset.hpp"

using namespace ml;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    auto dir = std::filesystem::temp_directory_path() / "ml_dataset_tests";
    std::filesystem::create_directories(dir);
    auto path = dir / name;
    std::ofstream out(path, std::ios::binary);
    out << content;
    return path.string();
}

}  // namespace

TEST_CASE("csv with header: labels encoded by first appearance") {
    auto path = write_temp("header.csv",
                           "a,b,cls\n"
                           "1,2,yes\n"
                           "3,4,no\n"
                           "5,6,yes\n");
    LoadStats stats;
    Dataset data = load_csv(path, CsvSchema{}, &stats);

    CHECK(stats.header_detected);
    CHECK(stats.rows_kept == 3);
    CHECK(stats.rows_dropped == 0);
    CHECK(data.rows() == 3);
    CHECK(data.dims() == 2);
    CHECK(data.labels == std::vector<int>{0, 1, 0});
    CHECK(data.class_names == std::vector<std::string>{"yes", "no"});
    CHECK(data.feature_names == std::vector<std::string>{"a", "b"});
    CHECK(data.features(1, 0) == doctest::Approx(3.0));
}

TEST_CASE("csv without header keeps the first row as data") {
    auto path = write_temp("noheader.csv",
                           "1,2,0\n"
                           "3,4,1\n");
    LoadStats stats;
    Dataset data = load_csv(path, CsvSchema{}, &stats);
    CHECK_FALSE(stats.header_detected);
    CHECK(data.rows() == 2);
    CHECK(data.feature_names == std::vector<std::string>{"f0", "f1"});
}

TEST_CASE("whitespace delimiter splits on runs of spaces and tabs") {
    auto path = write_temp("ws.csv",
                           "1.5\t 2.5   A\n"
                           "3.5  4.5\tB\n");
    CsvSchema schema;
    schema.delimiter = '\0';
    Dataset data = load_csv(path, schema);
    CHECK(data.rows() == 2);
    CHECK(data.features(0, 1) == doctest::Approx(2.5));
    CHECK(data.class_names == std::vector<std::string>{"A", "B"});
}

TEST_CASE("skip_rows discards leading junk lines") {
    auto path = write_temp("skip.csv",
                           "junk line one\n"
                           "junk line two\n"
                           "1,2,x\n"
                           "3,4,y\n");
    CsvSchema schema;
    schema.skip_rows = 2;
    Dataset data = load_csv(path, schema);
    CHECK(data.rows() == 2);
    CHECK(data.num_classes() == 2);
}

TEST_CASE("label_column and drop_columns use raw file positions") {
    auto path = write_temp("columns.csv",
                           "id1,red,10,20\n"
                           "id2,blue,30,40\n");
    CsvSchema schema;
    schema.label_column = 1;
    schema.drop_columns = {0};
    Dataset data = load_csv(path, schema);
    CHECK(data.dims() == 2);
    CHECK(data.features(0, 0) == doctest::Approx(10.0));
    CHECK(data.class_names == std::vector<std::string>{"red", "blue"});

    SUBCASE("negative label column counts from the end") {
        CsvSchema neg;
        neg.label_column = -3;
        neg.drop_columns = {0};
        Dataset d2 = load_csv(path, neg);
        CHECK(d2.class_names == std::vector<std::string>{"red", "blue"});
    }
}

TEST_CASE("drop policy removes rows with missing cells and counts them") {
    auto path = write_temp("missing_drop.csv",
                           "1,2,a\n"
                           "5.1,?,b\n"
                           "3,4,a\n"
                           "?,9,b\n"
                           "7,8,b\n");
    LoadStats stats;
    Dataset data = load_csv(path, CsvSchema{}, &stats);
    CHECK(stats.rows_kept == 3);
    CHECK(stats.rows_dropped == 2);
    CHECK_FALSE(data.has_missing());
}

TEST_CASE("impute policy keeps missing cells as NaN") {
    auto path = write_temp("missing_impute.csv",
                           "1,2,a\n"
                           "5.1,?,b\n"
                           "3,4,a\n"
                           "2,6,b\n");
    CsvSchema schema;
    schema.missing_policy = MissingPolicy::Impute;
    LoadStats stats;
    Dataset data = load_csv(path, schema, &stats);
    CHECK(stats.rows_kept == 4);
    CHECK(data.has_missing());
    CHECK(std::isnan(data.features(1, 1)));

    SUBCASE("a missing label still drops the row") {
        auto p2 = write_temp("missing_label.csv",
                             "1,2,a\n"
                             "3,4,?\n"
                             "5,6,b\n");
        LoadStats s2;
        Dataset d2 = load_csv(p2, schema, &s2);
        CHECK(s2.rows_kept == 2);
        CHECK(s2.rows_dropped == 1);
    }
}

TEST_CASE("parse errors carry file position and are typed") {
    auto ragged = write_temp("ragged.csv",
                             "1,2,a\n"
                             "1,2,3,a\n");
    CHECK_THROWS_AS(load_csv(ragged, CsvSchema{}), ParseError);
    try {
        load_csv(ragged, CsvSchema{});
    } catch (const ParseError& e) {
        std::string msg = e.what();
        CHECK(msg.find("expected 3 columns, got 4") != std::string::npos);
    }

    // The bad token sits in the second row so it cannot be mistaken for a
    // header line.
    auto textual = write_temp("textual.csv",
                              "1,5,a\n"
                              "2,apple,b\n");
    CHECK_THROWS_AS(load_csv(textual, CsvSchema{}), ParseError);

    CHECK_THROWS_AS(load_csv("/nonexistent/nowhere.csv", CsvSchema{}), IoError);

    CsvSchema bad_cols;
    bad_cols.drop_columns = {0, 1};
    auto tiny = write_temp("tiny.csv", "1,2,a\n");
    // Dropping every feature column leaves nothing to train on.
    CHECK_THROWS_AS(load_csv(tiny, bad_cols), ConfigError);

    CsvSchema label_dropped;
    label_dropped.label_column = 0;
    label_dropped.drop_columns = {0};
    CHECK_THROWS_AS(load_csv(tiny, label_dropped), ConfigError);
}

TEST_CASE("normalizer: column [0,2] maps to [-1,1]") {
    Dataset data;
    data.features.resize(2, 2);
    data.features << 0.0, 5.0,
                     2.0, 5.0;
    data.labels = {0, 1};
    data.class_names = {"a", "b"};
    data.feature_names = {"f0", "f1"};

    NormalizationParams params = fit_normalizer(data);
    CHECK(params.mean(0) == doctest::Approx(1.0));
    CHECK(params.stddev(0) == doctest::Approx(1.0));
    CHECK(params.stddev(1) == doctest::Approx(1.0));  // constant column

    Dataset out = apply_normalizer(params, data);
    CHECK(out.features(0, 0) == doctest::Approx(-1.0));
    CHECK(out.features(1, 0) == doctest::Approx(1.0));
    CHECK(out.features(0, 1) == doctest::Approx(0.0));

    SUBCASE("dimension mismatch is rejected") {
        Dataset wrong = data;
        wrong.features.resize(2, 3);
        wrong.features.setZero();
        wrong.feature_names = {"f0", "f1", "f2"};
        CHECK_THROWS_AS(apply_normalizer(params, wrong), ValidationError);
    }
}

TEST_CASE("normalizer: held-out columns keep nonzero means under train params") {
    Dataset train;
    train.features.resize(3, 1);
    train.features << 0.0, 1.0, 2.0;
    train.labels = {0, 0, 1};
    train.class_names = {"a", "b"};
    train.feature_names = {"f0"};

    Dataset test = train;
    test.features << 5.0, 6.0, 7.0;

    Dataset out = apply_normalizer(fit_normalizer(train), test);
    double mean = out.features.col(0).mean();
    CHECK(mean > 1.0);  // far from zero: parameters came from train alone
}

TEST_CASE("imputer fills class medians on train and global medians on test") {
    Dataset data;
    data.features.resize(5, 2);
    double nan = std::numeric_limits<double>::quiet_NaN();
    data.features << 1.0, 10.0,
                     3.0, nan,
                     nan, 30.0,
                     7.0, 40.0,
                     9.0, 50.0;
    data.labels = {0, 0, 1, 1, 1};
    data.class_names = {"a", "b"};
    data.feature_names = {"f0", "f1"};

    ImputeParams params = fit_imputer(data);
    // class 0 medians: f0 from {1,3} = 2; class 1: f0 from {7,9} = 8
    CHECK(params.class_median(0, 0) == doctest::Approx(2.0));
    CHECK(params.class_median(1, 0) == doctest::Approx(8.0));
    CHECK(params.global_median(0) == doctest::Approx(5.0));  // {1,3,7,9}

    Dataset train_filled = apply_imputer(params, data, true);
    CHECK(train_filled.features(2, 0) == doctest::Approx(8.0));
    CHECK(train_filled.features(1, 1) == doctest::Approx(10.0));
    CHECK_FALSE(train_filled.has_missing());

    Dataset test_filled = apply_imputer(params, data, false);
    CHECK(test_filled.features(2, 0) == doctest::Approx(5.0));

    SUBCASE("a column that is all missing falls back to zero") {
        Dataset hole = data;
        for (int r = 0; r < 5; ++r) hole.features(r, 1) = nan;
        ImputeParams p2 = fit_imputer(hole);
        Dataset filled = apply_imputer(p2, hole, false);
        CHECK(filled.features(0, 1) == doctest::Approx(0.0));
    }
}

TEST_CASE("stratified split: per-class rounding, determinism, sorted output") {
    // 70 samples per class over 3 classes, fraction 0.3: 21 test per class.
    std::vector<int> labels;
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < 70; ++i) labels.push_back(c);
    }
    SplitSpec spec;
    spec.test_fraction = 0.3;
    spec.seed = 7;
    SplitIndices idx = split_indices(labels, 3, spec);
    CHECK(idx.test.size() == 63);
    CHECK(idx.train.size() == 147);

    std::vector<int> per_class(3, 0);
    for (int i : idx.test) per_class[labels[i]] += 1;
    CHECK(per_class == std::vector<int>{21, 21, 21});

    CHECK(std::is_sorted(idx.train.begin(), idx.train.end()));
    CHECK(std::is_sorted(idx.test.begin(), idx.test.end()));

    SplitIndices again = split_indices(labels, 3, spec);
    CHECK(idx.train == again.train);
    CHECK(idx.test == again.test);

    SUBCASE("union of the two sides reproduces the full index set") {
        std::set<int> all(idx.train.begin(), idx.train.end());
        all.insert(idx.test.begin(), idx.test.end());
        CHECK(all.size() == labels.size());
        CHECK(*all.begin() == 0);
        CHECK(*all.rbegin() == static_cast<int>(labels.size()) - 1);
    }

    SUBCASE("different seed moves the partition") {
        SplitSpec other = spec;
        other.seed = 8;
        SplitIndices moved = split_indices(labels, 3, other);
        CHECK(moved.test != idx.test);
    }
}

TEST_CASE("stratified split keeps one sample per class on both sides") {
    std::vector<int> labels = {0, 0, 1, 1, 1, 1, 1, 1, 1, 1};
    SplitSpec spec;
    spec.test_fraction = 0.3;
    SplitIndices idx = split_indices(labels, 2, spec);
    int c0_test = 0;
    for (int i : idx.test) {
        if (labels[i] == 0) ++c0_test;
    }
    CHECK(c0_test == 1);  // round(2*0.3) = 1, clamped range [1, 1]

    SUBCASE("a single-member class cannot be split") {
        std::vector<int> bad = {0, 1, 1, 1};
        CHECK_THROWS_AS(split_indices(bad, 2, spec), ValidationError);
    }
    SUBCASE("fraction outside (0,1) is rejected") {
        SplitSpec bad = spec;
        bad.test_fraction = 1.0;
        CHECK_THROWS_AS(split_indices(labels, 2, bad), ValidationError);
    }
}

TEST_CASE("split_stratified returns datasets that recombine to the input") {
    Dataset data;
    data.features.resize(10, 1);
    for (int i = 0; i < 10; ++i) data.features(i, 0) = i;
    data.labels = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
    data.class_names = {"a", "b"};
    data.feature_names = {"f0"};

    auto [train, test] = split_stratified(data, SplitSpec{});
    CHECK(train.rows() + test.rows() == 10);
    CHECK(train.num_classes() == 2);
    std::set<double> seen;
    for (int r = 0; r < train.rows(); ++r) seen.insert(train.features(r, 0));
    for (int r = 0; r < test.rows(); ++r) seen.insert(test.features(r, 0));
    CHECK(seen.size() == 10);
}

TEST_CASE("kfold: disjoint cover with per-class balance") {
    std::vector<int> labels;
    for (int c = 0; c < 2; ++c) {
        for (int i = 0; i < 9; ++i) labels.push_back(c);
    }
    auto folds = kfold_indices(labels, 2, 3, 99);
    REQUIRE(folds.size() == 3);

    std::set<int> validation_union;
    for (const auto& fold : folds) {
        CHECK(fold.train.size() + fold.validation.size() == labels.size());
        std::vector<int> per_class(2, 0);
        for (int i : fold.validation) per_class[labels[i]] += 1;
        CHECK(per_class[0] == 3);
        CHECK(per_class[1] == 3);
        validation_union.insert(fold.validation.begin(), fold.validation.end());
    }
    CHECK(validation_union.size() == labels.size());

    SUBCASE("more folds than the smallest class is rejected") {
        std::vector<int> small = {0, 0, 1, 1, 1, 1};
        CHECK_THROWS_AS(kfold_indices(small, 2, 3, 1), ValidationError);
    }
    SUBCASE("fewer than two folds is rejected") {
        CHECK_THROWS_AS(kfold_indices(labels, 2, 1, 1), ValidationError);
    }
}

TEST_CASE("take keeps the requested rows in order") {
    Dataset data;
    data.features.resize(4, 1);
    data.features << 10, 20, 30, 40;
    data.labels = {0, 1, 0, 1};
    data.class_names = {"a", "b"};
    data.feature_names = {"f0"};

    Dataset sub = take(data, {2, 0});
    CHECK(sub.rows() == 2);
    CHECK(sub.features(0, 0) == doctest::Approx(30));
    CHECK(sub.features(1, 0) == doctest::Approx(10));
    CHECK(sub.labels == std::vector<int>{0, 0});

    CHECK_THROWS_AS(take(data, {4}), ValidationError);
    CHECK_THROWS_AS(take(data, {-1}), ValidationError);
}

TEST_CASE("dataset validation catches shape and label defects") {
    Dataset data;
    data.features.resize(2, 1);
    data.features << 1.0, 2.0;
    data.labels = {0, 1};
    data.class_names = {"a", "b"};
    data.feature_names = {"f0"};
    CHECK_NOTHROW(data.validate());

    SUBCASE("label out of range") {
        data.labels = {0, 5};
        CHECK_THROWS_AS(data.validate(), ValidationError);
    }
    SUBCASE("a declared class never occurs") {
        data.class_names = {"a", "b", "c"};
        CHECK_THROWS_AS(data.validate(), ValidationError);
    }
    SUBCASE("NaN rejected unless explicitly allowed") {
        data.features(0, 0) = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(data.validate(), ValidationError);
        CHECK_NOTHROW(data.validate(true));
    }
    SUBCASE("class_counts tallies per class") {
        CHECK(data.class_counts() == std::vector<int>{1, 1});
    }
}
