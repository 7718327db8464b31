// Command-line front end for the anomaly-detection library: train models,
// evaluate checkpoints, score single images, sweep ablation grids, generate
// synthetic datasets, and aggregate multi-seed runs.
//
// Exit codes: 0 success, 1 internal error, 2 user error (bad flags, bad
// config, unreadable data, missing files).

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <sys/wait.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "fcad/config.hpp"
#include "fcad/data.hpp"
#include "fcad/engine.hpp"
#include "fcad/graph.hpp"
#include "fcad/metrics.hpp"
#include "fcad/scoring.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    out << content;
    if (!out) throw fcad::IoError("failed to write " + path.string());
}

// Loads the config file (if any), applies key=value overrides, then the
// --seed flag, then falls back to $FCAD_DATA_ROOT for an unset dataset root.
fcad::RunConfig build_config(const std::string& config_path,
                             const std::vector<std::string>& overrides,
                             const std::optional<uint64_t>& seed_flag) {
    fcad::RunConfig c = fcad::load_run_config(config_path, overrides);
    if (seed_flag) c.seed = *seed_flag;
    if (c.dataset.root.empty())
        if (const char* env = std::getenv("FCAD_DATA_ROOT")) c.dataset.root = env;
    return c;
}

void require_cpu(const std::string& device) {
    if (device != "cpu")
        throw fcad::ConfigError("unsupported device '" + device + "': this build runs on cpu");
}

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

// ---------------------------------------------------------------------------
// train

json summary_json(const fcad::TrainResult& r) {
    json s;
    s["final_loss"] = r.final_loss;
    s["final_checkpoint"] = r.final_checkpoint;
    s["best_iteration"] = r.best_iteration;
    s["best_i_auroc"] = r.best_i_auroc ? json(*r.best_i_auroc) : json(nullptr);
    s["final_metrics"] =
        r.final_report ? json::parse(fcad::report_to_json(*r.final_report))["overall"]
                       : json(nullptr);
    return s;
}

int cmd_train(const fcad::RunConfig& config, const std::string& output) {
    fcad::validate(config);
    fcad::write_resolved_config(config, (fs::path(output) / "resolved_config.toml").string());
    const fcad::TrainResult r = fcad::train(config, output);
    write_text(fs::path(output) / "summary.json", summary_json(r).dump(2) + "\n");
    if (r.final_report) {
        write_text(fs::path(output) / "report.json", fcad::report_to_json(*r.final_report));
        write_text(fs::path(output) / "report.csv", fcad::report_to_csv(*r.final_report));
    }
    std::cout << "variant " << fcad::variant_name(config.variant.name) << ", "
              << config.iterations << " iterations, final loss " << fmt6(r.final_loss) << "\n";
    std::cout << "checkpoint: " << r.final_checkpoint << "\n";
    std::cout << "log: " << r.log_path << "\n";
    if (r.best_i_auroc)
        std::cout << "best i_auroc " << fmt6(*r.best_i_auroc) << " at iteration "
                  << r.best_iteration << " (" << r.best_checkpoint << ")\n";
    if (r.final_report)
        std::cout << "final i_auroc " << fmt6(r.final_report->overall.i_auroc) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const fcad::RunConfig& config, const std::string& output,
             const std::string& checkpoint, bool heatmaps, bool no_masks) {
    fcad::write_resolved_config(config, (fs::path(output) / "resolved_config.toml").string());
    fcad::ModelGraph graph = fcad::graph_from_checkpoint(checkpoint);
    const fcad::PackedSplit test = fcad::load_packed(config.dataset, fcad::Split::kTest);
    const fcad::ScoredSplit scored = fcad::score_split(
        graph, test.images, config.dataset.score_reduction, config.smoothing_sigma);

    const bool pixel = test.has_masks && !no_masks;
    const std::vector<fcad::Tensor> no_maps;
    const fcad::EvalReport report = fcad::compute_eval_report(
        scored.scores, test.labels, test.categories, pixel ? scored.maps : no_maps,
        pixel ? test.masks : no_maps);

    write_text(fs::path(output) / "report.json", fcad::report_to_json(report));
    const std::string csv = fcad::report_to_csv(report);
    write_text(fs::path(output) / "report.csv", csv);

    if (heatmaps) {
        const fs::path dir = fs::path(output) / "heatmaps";
        fs::create_directories(dir);
        for (size_t i = 0; i < scored.maps.size(); ++i) {
            char prefix[16];
            std::snprintf(prefix, sizeof(prefix), "%04zu_", i);
            const std::string stem = fs::path(test.paths[i]).stem().string();
            fcad::write_heatmap_png((dir / (prefix + stem + ".png")).string(),
                                    scored.maps[i]);
        }
    }
    std::cout << csv;
    return 0;
}

// ---------------------------------------------------------------------------
// score

int cmd_score(const fcad::RunConfig& config, const std::string& output,
              const std::string& checkpoint, const std::vector<std::string>& images) {
    fcad::write_resolved_config(config, (fs::path(output) / "resolved_config.toml").string());
    fcad::ModelGraph graph = fcad::graph_from_checkpoint(checkpoint);
    fs::create_directories(fs::path(output) / "maps");
    fs::create_directories(fs::path(output) / "heatmaps");

    for (size_t i = 0; i < images.size(); ++i) {
        try {
            const fcad::Sample sample = fcad::load_image_file(images[i]);
            const fcad::Preprocessed prep = fcad::preprocess(sample, config.dataset);
            const int s = prep.image.dim(1);
            fcad::Tensor batch({1, 3, s, s});
            std::memcpy(batch.v.data(), prep.image.v.data(),
                        prep.image.v.size() * sizeof(float));
            const fcad::ScoredSplit scored = fcad::score_split(
                graph, batch, config.dataset.score_reduction, config.smoothing_sigma);

            char prefix[16];
            std::snprintf(prefix, sizeof(prefix), "%04zu_", i);
            const std::string id = prefix + fs::path(images[i]).stem().string();
            fcad::export_score_map((fs::path(output) / "maps" / id).string(), scored.maps[0],
                                   images[i]);
            fcad::write_heatmap_png((fs::path(output) / "heatmaps" / (id + ".png")).string(),
                                    scored.maps[0]);
            std::cout << images[i] << "\t" << fmt6(scored.scores[0]) << "\n";
        } catch (const fcad::Error& e) {
            std::cerr << "score: skipping " << images[i] << ": " << e.what() << "\n";
        }
    }
    return 0;
}

// ---------------------------------------------------------------------------
// ablate

struct Cell {
    std::string label;     // value column ("B", "-1", ...)
    std::string dir_name;  // per-cell output directory under --output
    fcad::RunConfig config;
};

struct CellOutcome {
    bool ok = false;
    json summary;  // parsed <cell>/summary.json when ok
};

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s)
        if (c == '\'') out += "'\\''";
        else out += c;
    return out + "'";
}

std::string self_path(const char* argv0) {
    std::error_code ec;
    const fs::path p = fs::read_symlink("/proc/self/exe", ec);
    return ec ? std::string(argv0) : p.string();
}

// One grid cell = one `train` subprocess writing into its own directory.
// Never throws: cell failures of any kind degrade to a FAILED row.
CellOutcome run_cell(const std::string& self, const fs::path& cell_dir,
                     const fcad::RunConfig& config) {
    CellOutcome out;
    try {
        fcad::write_resolved_config(config, (cell_dir / "config.toml").string());
        const std::string cmd = shell_quote(self) + " train --config " +
                                shell_quote((cell_dir / "config.toml").string()) +
                                " --output " + shell_quote(cell_dir.string()) + " > " +
                                shell_quote((cell_dir / "train_output.log").string()) +
                                " 2>&1";
        const int status = std::system(cmd.c_str());
        if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) return out;
        std::ifstream in(cell_dir / "summary.json");
        if (!in) return out;
        out.summary = json::parse(in);
        out.ok = true;
    } catch (const std::exception&) {
        out.ok = false;
    }
    return out;
}

std::string cell_metric(const CellOutcome& o, const char* key) {
    if (!o.ok) return "";
    if (std::strcmp(key, "final_loss") == 0) return fmt6(o.summary["final_loss"].get<double>());
    if (std::strcmp(key, "best_i_auroc") == 0)
        return o.summary["best_i_auroc"].is_null()
                   ? ""
                   : fmt6(o.summary["best_i_auroc"].get<double>());
    const json& m = o.summary["final_metrics"];
    if (m.is_null() || m[key].is_null()) return "";
    return fmt6(m[key].get<double>());
}

int cmd_ablate(const fcad::RunConfig& base, const std::string& output, const std::string& grid,
               int jobs, const std::string& self) {
    fcad::validate(base);
    if (jobs < 1) throw fcad::ConfigError("--jobs must be at least 1");
    fcad::write_resolved_config(base, (fs::path(output) / "resolved_config.toml").string());

    std::vector<Cell> cells;
    std::string value_column;
    if (grid == "variants") {
        value_column = "variant";
        for (fcad::VariantName name : fcad::all_variants()) {
            Cell c{fcad::variant_name(name), "variant_" + fcad::variant_name(name), base};
            c.config.variant = fcad::make_variant(name);
            cells.push_back(std::move(c));
        }
    } else if (grid == "alpha") {
        value_column = "alpha";
        for (double a : {-2.0, -1.0, 0.0, 0.5, 1.0, 1.5, 2.0}) {
            std::ostringstream label;
            label << a;
            Cell c{label.str(), "alpha_" + label.str(), base};
            c.config.variant = fcad::make_variant(fcad::VariantName::kOurs);
            c.config.hard_mining.alpha = a;
            c.config.hard_mining.alpha_end = a;
            cells.push_back(std::move(c));
        }
    } else {
        throw fcad::ConfigError("unknown --grid '" + grid + "' (expected variants or alpha)");
    }

    // Fan the cells out to at most `jobs` concurrent train subprocesses.
    std::vector<CellOutcome> outcomes(cells.size());
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (size_t i = next++; i < cells.size(); i = next++)
            outcomes[i] = run_cell(self, fs::path(output) / cells[i].dir_name, cells[i].config);
    };
    const size_t n_workers = std::min<size_t>(static_cast<size_t>(jobs), cells.size());
    std::vector<std::thread> pool;
    for (size_t w = 0; w + 1 < n_workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::ostringstream csv;
    csv << value_column << ",status,final_loss,i_auroc,p_auroc,aupro,best_i_auroc\n";
    for (size_t i = 0; i < cells.size(); ++i) {
        const CellOutcome& o = outcomes[i];
        if (!o.ok)
            std::cerr << "warning: ablation cell " << cells[i].label << " failed; see "
                      << (fs::path(output) / cells[i].dir_name / "train_output.log").string()
                      << "\n";
        csv << cells[i].label << "," << (o.ok ? "OK" : "FAILED") << ","
            << cell_metric(o, "final_loss") << "," << cell_metric(o, "i_auroc") << ","
            << cell_metric(o, "p_auroc") << "," << cell_metric(o, "aupro") << ","
            << cell_metric(o, "best_i_auroc") << "\n";
    }
    write_text(fs::path(output) / "ablation.csv", csv.str());
    std::cout << csv.str();
    return 0;
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(uint64_t seed, int n_train, int n_test_normal, int n_test_anom, int image_size,
              const std::string& output) {
    const fcad::DatasetSpec spec = fcad::make_synthetic_dataset(seed, n_train, n_test_normal,
                                                                n_test_anom, image_size, output);
    fcad::RunConfig c;
    c.dataset = spec;
    c.dataset.root = fs::absolute(spec.root).lexically_normal().string();
    fcad::write_resolved_config(c, (fs::path(output) / "resolved_config.toml").string());
    std::cout << "synthetic dataset at " << spec.root << " (category " << spec.category << ")\n"
              << "train normals: " << n_train << ", test normals: " << n_test_normal
              << ", test anomalies: " << n_test_anom << ", image size: " << image_size << "\n"
              << "config: " << (fs::path(output) / "resolved_config.toml").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// aggregate

std::vector<uint64_t> parse_seeds(const std::string& csv) {
    std::vector<uint64_t> seeds;
    std::stringstream ss(csv);
    std::string field;
    while (std::getline(ss, field, ',')) {
        try {
            size_t used = 0;
            seeds.push_back(std::stoull(field, &used));
            if (used != field.size()) throw std::invalid_argument(field);
        } catch (const std::exception&) {
            throw fcad::ConfigError("--seeds expects a comma-separated integer list, got '" +
                                    csv + "'");
        }
    }
    return seeds;
}

int cmd_aggregate(const fcad::RunConfig& base, const std::string& output,
                  const std::string& seeds_csv) {
    fcad::validate(base);
    fcad::write_resolved_config(base, (fs::path(output) / "resolved_config.toml").string());
    const fcad::MultiSeedReport rep = fcad::multi_seed(base, parse_seeds(seeds_csv), output);
    write_text(fs::path(output) / "aggregate.json", fcad::multi_seed_to_json(rep));
    const std::string csv = fcad::multi_seed_to_csv(rep);
    write_text(fs::path(output) / "aggregate.csv", csv);
    std::cout << csv;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "Feature-reconstruction anomaly detection: training, evaluation and "
        "ablation experiments.\n"
        "Config files use [run], [dataset] and [hard_mining] sections; trailing "
        "key=value or section.key=value arguments override file settings.\n"
        "$FCAD_DATA_ROOT supplies the dataset root when the config leaves it empty."};
    app.require_subcommand(1);

    std::string config_path, output = "fcad_out", device = "cpu";
    std::vector<std::string> overrides;
    std::optional<uint64_t> seed_flag;

    auto add_common = [&](CLI::App* sub, bool with_overrides) {
        sub->add_option("--config", config_path, "run configuration file (TOML-style)");
        sub->add_option("--output", output, "output directory (default fcad_out)");
        sub->add_option("--seed", seed_flag, "override the run seed");
        sub->add_option("--device", device, "compute device (only cpu is supported)");
        if (with_overrides)
            sub->add_option("overrides", overrides,
                            "key=value or section.key=value config overrides");
    };

    CLI::App* t_train = app.add_subcommand("train", "train a model and write checkpoints");
    add_common(t_train, true);

    std::string checkpoint;
    bool heatmaps = false, no_masks = false;
    CLI::App* t_eval = app.add_subcommand("eval", "evaluate a checkpoint on a test split");
    add_common(t_eval, true);
    t_eval->add_option("--checkpoint", checkpoint, "trained checkpoint (.bin)")->required();
    t_eval->add_flag("--heatmaps", heatmaps, "write one heatmap PNG per test image");
    t_eval->add_flag("--no-masks", no_masks, "ignore ground-truth masks (image metrics only)");

    std::vector<std::string> images;
    CLI::App* t_score = app.add_subcommand("score", "score individual image files");
    add_common(t_score, false);
    t_score->add_option("--checkpoint", checkpoint, "trained checkpoint (.bin)")->required();
    t_score->add_option("images", images, "image files to score")->required();

    std::string grid = "variants";
    int jobs = 1;
    CLI::App* t_ablate = app.add_subcommand("ablate", "train a grid of config variants");
    add_common(t_ablate, true);
    t_ablate->add_option("--grid", grid, "grid to sweep: variants | alpha");
    t_ablate->add_option("--jobs", jobs, "max concurrent training subprocesses");

    uint64_t synth_seed = 0;
    int n_train = 200, n_test_normal = 50, n_test_anom = 50, image_size = 64;
    CLI::App* t_synth = app.add_subcommand("synth", "generate a synthetic texture dataset");
    t_synth->add_option("--seed", synth_seed, "generator seed");
    t_synth->add_option("--n-train", n_train, "training (normal) image count");
    t_synth->add_option("--n-test-normal", n_test_normal, "normal test image count");
    t_synth->add_option("--n-test-anom", n_test_anom, "anomalous test image count");
    t_synth->add_option("--image-size", image_size, "square image side in pixels");
    t_synth->add_option("--output", output, "dataset root directory");

    std::string seeds_csv;
    CLI::App* t_agg = app.add_subcommand("aggregate", "train several seeds, report mean ± std");
    add_common(t_agg, true);
    t_agg->add_option("--seeds", seeds_csv, "comma-separated seed list (at least two)")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        require_cpu(device);
        if (t_train->parsed())
            return cmd_train(build_config(config_path, overrides, seed_flag), output);
        if (t_eval->parsed())
            return cmd_eval(build_config(config_path, overrides, seed_flag), output, checkpoint,
                            heatmaps, no_masks);
        if (t_score->parsed())
            return cmd_score(build_config(config_path, overrides, seed_flag), output, checkpoint,
                             images);
        if (t_ablate->parsed())
            return cmd_ablate(build_config(config_path, overrides, seed_flag), output, grid,
                              jobs, self_path(argv[0]));
        if (t_synth->parsed())
            return cmd_synth(synth_seed, n_train, n_test_normal, n_test_anom, image_size,
                             output);
        if (t_agg->parsed())
            return cmd_aggregate(build_config(config_path, overrides, seed_flag), output,
                                 seeds_csv);
        std::cerr << "error: no command given\n";
        return 2;
    } catch (const fcad::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const fcad::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const fcad::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const fcad::MetricError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}
