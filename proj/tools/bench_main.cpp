#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ml/bench.hpp"

namespace {

// The output directory must be usable before any model fitting starts, so a
// bad --out fails in seconds rather than after a long run.
void check_writable(const std::string& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) {
        throw ml::IoError("cannot create output directory " + out_dir + ": " +
                          ec.message());
    }
    const std::string probe = out_dir + "/.write_probe";
    {
        std::ofstream file(probe, std::ios::binary);
        if (!file.is_open()) {
            throw ml::IoError("output directory " + out_dir +
                              " is not writable");
        }
    }
    std::filesystem::remove(probe, ec);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Benchmark harness for the classifier library"};
    app.require_subcommand(1);

    std::string manifest_path;
    std::string out_override;
    int jobs = 1;
    bool eval_on_train = false;
    bool dump_metrics = false;
    bool verbose = false;

    CLI::App* run_cmd = app.add_subcommand("run", "Run the benchmark");
    run_cmd->add_option("--manifest", manifest_path, "Manifest JSON path")
        ->required();
    run_cmd->add_option("--out", out_override,
                        "Output directory (overrides the manifest)");
    run_cmd->add_option("--jobs", jobs, "Worker threads over dataset x repeat");
    run_cmd->add_flag("--eval-on-train", eval_on_train,
                      "Also report the LMNN-metric 1-NN training-set "
                      "diagnostic");
    run_cmd->add_flag("--dump-metrics", dump_metrics,
                      "Write each dataset's learned metric as CSV");
    run_cmd->add_flag("--verbose", verbose, "Progress lines on stderr");

    CLI::App* validate_cmd =
        app.add_subcommand("validate", "Check a manifest and its files");
    validate_cmd->add_option("--manifest", manifest_path, "Manifest JSON path")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(validate_cmd)) {
            ml::bench::BenchManifest manifest =
                ml::bench::load_manifest(manifest_path);
            ml::bench::validate_manifest(manifest, true);
            std::cout << "manifest ok: " << manifest.datasets.size()
                      << " dataset(s)\n";
            return 0;
        }

        ml::bench::BenchManifest manifest =
            ml::bench::load_manifest(manifest_path);
        const std::string out_dir =
            out_override.empty() ? manifest.output_dir : out_override;
        check_writable(out_dir);

        ml::bench::BenchOptions options;
        options.jobs = jobs;
        options.eval_on_train = eval_on_train;
        options.dump_metrics = dump_metrics;
        options.verbose = verbose;

        ml::bench::BenchResult result = ml::bench::run(manifest, options);
        ml::bench::emit(manifest, result, out_dir);

        std::cout << ml::bench::render_table(manifest, result);
        if (!result.dataset_errors.empty()) {
            std::cerr << "\n" << result.dataset_errors.size()
                      << " dataset error(s); see table above.\n";
            return 1;
        }
        return 0;
    } catch (const ml::ConfigError& e) {
        std::cerr << "manifest error: " << e.what() << "\n";
        return 2;
    } catch (const ml::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return app.got_subcommand(validate_cmd) ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
