// End-to-end tests of the command-line tool: every subcommand is exercised
// through a real subprocess, checking exit codes, artifact layout, and the
// documented rejection behavior. The binary path arrives in $FCAD_BIN.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

std::string quote(const std::string& s) {
    std::string out = "'";
    for (char c : s)
        if (c == '\'') out += "'\\''";
        else out += c;
    return out + "'";
}

const std::string& bin() {
    static const std::string path = [] {
        const char* env = std::getenv("FCAD_BIN");
        REQUIRE_MESSAGE(env != nullptr, "FCAD_BIN must point at the CLI binary");
        return std::string(env);
    }();
    return path;
}

const fs::path& scratch_root() {
    static const fs::path root = [] {
        const fs::path p = fs::temp_directory_path() / "fcad_cli_tests";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

// Runs `<env> <bin> <args>` through the shell, capturing exit code + streams.
RunResult run_with_env(const std::string& env_prefix, const std::string& args) {
    static int counter = 0;
    static std::mutex mu;
    fs::path out_file, err_file;
    {
        std::lock_guard<std::mutex> lock(mu);
        const fs::path dir = scratch_root() / "io";
        fs::create_directories(dir);
        out_file = dir / ("out" + std::to_string(counter) + ".txt");
        err_file = dir / ("err" + std::to_string(counter) + ".txt");
        ++counter;
    }
    std::string cmd = env_prefix.empty() ? "" : env_prefix + " ";
    cmd += quote(bin()) + " " + args + " > " + quote(out_file.string()) + " 2> " +
           quote(err_file.string());
    const int status = std::system(cmd.c_str());
    RunResult r;
    if (status != -1 && WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
}

RunResult run(const std::string& args) { return run_with_env("", args); }

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(line);
    return lines;
}

// Tiny synthetic dataset generated once through the CLI itself.
const fs::path& dataset_root() {
    static const fs::path root = [] {
        const fs::path p = scratch_root() / "data";
        const RunResult r = run("synth --seed 5 --n-train 6 --n-test-normal 3 "
                                "--n-test-anom 3 --image-size 32 --output " +
                                quote(p.string()));
        REQUIRE_MESSAGE(r.exit_code == 0, r.err);
        return p;
    }();
    return root;
}

std::string data_config() { return (dataset_root() / "resolved_config.toml").string(); }

// Micro settings shared by every training invocation in this suite.
const std::string kFast = " iterations=3 batch_size=4 eval_every=2";

// One trained model shared by the eval/score cases.
const fs::path& trained_dir() {
    static const fs::path dir = [] {
        const fs::path p = scratch_root() / "trained";
        const RunResult r = run("train --config " + quote(data_config()) + " --output " +
                                quote(p.string()) + " variant=B" + kFast);
        REQUIRE_MESSAGE(r.exit_code == 0, r.err);
        return p;
    }();
    return dir;
}

std::string checkpoint() { return (trained_dir() / "checkpoint_final.bin").string(); }

// Relative paths of all regular files under a directory, sorted.
std::vector<fs::path> tree_of(const fs::path& root) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

TEST_CASE("invocation basics: help, no-command, bad device") {
    CHECK(run("").exit_code == 2);
    const RunResult help = run("--help");
    CHECK(help.exit_code == 0);
    CHECK(help.out.find("train") != std::string::npos);
    CHECK(help.out.find("FCAD_DATA_ROOT") != std::string::npos);
    CHECK(run("frobnicate").exit_code == 2);

    const RunResult dev = run("train --config " + quote(data_config()) +
                              " --output /tmp/unused --device cuda");
    CHECK(dev.exit_code == 2);
    CHECK(dev.err.find("cuda") != std::string::npos);
}

TEST_CASE("synth generates a deterministic dataset tree") {
    const fs::path a = scratch_root() / "synth_a";
    const fs::path b = scratch_root() / "synth_b";
    const fs::path c = scratch_root() / "synth_c";
    for (const auto& [dir, seed] : {std::pair{a, 9}, {b, 9}, {c, 10}}) {
        const RunResult r = run("synth --seed " + std::to_string(seed) +
                                " --n-train 3 --n-test-normal 2 --n-test-anom 2 "
                                "--image-size 32 --output " +
                                quote(dir.string()));
        REQUIRE_MESSAGE(r.exit_code == 0, r.err);
        CHECK(r.out.find("synthetic dataset") != std::string::npos);
        CHECK(fs::exists(dir / "resolved_config.toml"));
        CHECK(fs::exists(dir / "manifest.json"));
    }

    // same seed → byte-identical images and masks; different seed → not
    const auto files_a = tree_of(a / "synthetic");
    REQUIRE(files_a == tree_of(b / "synthetic"));
    REQUIRE_FALSE(files_a.empty());
    bool all_equal_ab = true, all_equal_ac = true;
    for (const auto& rel : files_a) {
        if (slurp(a / "synthetic" / rel) != slurp(b / "synthetic" / rel)) all_equal_ab = false;
        if (!fs::exists(c / "synthetic" / rel) ||
            slurp(a / "synthetic" / rel) != slurp(c / "synthetic" / rel))
            all_equal_ac = false;
    }
    CHECK(all_equal_ab);
    CHECK_FALSE(all_equal_ac);
}

TEST_CASE("train writes its artifact set and honors overrides") {
    const fs::path out = scratch_root() / "train_c";
    const RunResult r = run("train --config " + quote(data_config()) + " --output " +
                            quote(out.string()) + " variant=C" + kFast);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    for (const char* f : {"checkpoint_final.bin", "checkpoint_final.bin.json",
                          "train_log.jsonl", "resolved_config.toml", "summary.json"})
        CHECK_MESSAGE(fs::exists(out / f), f);

    const std::string snapshot = slurp(out / "resolved_config.toml");
    CHECK(snapshot.find("variant = \"C\"") != std::string::npos);
    CHECK(snapshot.find("iterations = 3") != std::string::npos);

    int iteration_lines = 0;
    for (const auto& line : lines_of(slurp(out / "train_log.jsonl")))
        if (line.find("\"iteration\"") != std::string::npos) ++iteration_lines;
    CHECK(iteration_lines == 3);

    const auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
    CHECK(summary["final_loss"].is_number());
    CHECK(summary["final_metrics"]["i_auroc"].is_number());

    SUBCASE("the seed flag overrides the config seed") {
        const fs::path out2 = scratch_root() / "train_seeded";
        const RunResult r2 = run("train --config " + quote(data_config()) + " --output " +
                                 quote(out2.string()) + " --seed 77 variant=B" + kFast);
        REQUIRE(r2.exit_code == 0);
        CHECK(slurp(out2 / "resolved_config.toml").find("seed = 77") != std::string::npos);
    }

    SUBCASE("unknown override keys are rejected by name") {
        const RunResult bad = run("train --config " + quote(data_config()) +
                                  " --output /tmp/unused bogus_key=1");
        CHECK(bad.exit_code == 2);
        CHECK(bad.err.find("bogus_key") != std::string::npos);
    }

    SUBCASE("a missing dataset root names the expected layout") {
        const RunResult bad = run("train --config " + quote(data_config()) +
                                  " --output /tmp/unused dataset.root=/no/such/dir" + kFast);
        CHECK(bad.exit_code == 2);
        CHECK(bad.err.find("expected layout") != std::string::npos);
        CHECK(bad.err.find("train/good") != std::string::npos);
    }

    SUBCASE("the dataset root falls back to the environment variable") {
        const fs::path out3 = scratch_root() / "train_env";
        const RunResult r3 = run_with_env(
            "FCAD_DATA_ROOT=" + quote(dataset_root().string()),
            "train --output " + quote(out3.string()) +
                " variant=B dataset.layout=synthetic dataset.image_size=32"
                " 'dataset.mean=[0.5,0.5,0.5]' 'dataset.std=[0.25,0.25,0.25]'" +
                kFast);
        REQUIRE_MESSAGE(r3.exit_code == 0, r3.err);
        CHECK(slurp(out3 / "resolved_config.toml").find(dataset_root().string()) !=
              std::string::npos);
    }
}

TEST_CASE("eval writes reports, repeats byte-identically, and masks are optional") {
    const fs::path out = scratch_root() / "eval_a";
    const std::string args = "eval --config " + quote(data_config()) + " --checkpoint " +
                             quote(checkpoint());
    const RunResult r = run(args + " --output " + quote(out.string()));
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    CHECK(fs::exists(out / "report.json"));
    CHECK(fs::exists(out / "resolved_config.toml"));
    const std::string csv = slurp(out / "report.csv");
    CHECK(csv.find("category,n_images,i_auroc,p_auroc,aupro,f1,acc,threshold_f1") == 0);
    CHECK(r.out == csv);  // the table is echoed to stdout

    SUBCASE("a second run produces identical bytes") {
        const fs::path out2 = scratch_root() / "eval_b";
        REQUIRE(run(args + " --output " + quote(out2.string())).exit_code == 0);
        CHECK(slurp(out2 / "report.csv") == csv);
        CHECK(slurp(out2 / "report.json") == slurp(out / "report.json"));
    }

    SUBCASE("--no-masks nulls the pixel metrics") {
        const fs::path out2 = scratch_root() / "eval_nm";
        REQUIRE(run(args + " --no-masks --output " + quote(out2.string())).exit_code == 0);
        const auto rep = nlohmann::json::parse(slurp(out2 / "report.json"));
        CHECK(rep["overall"]["p_auroc"].is_null());
        CHECK(rep["overall"]["aupro"].is_null());
        CHECK(rep["overall"]["i_auroc"].is_number());
    }

    SUBCASE("--heatmaps renders one image per test sample") {
        const fs::path out2 = scratch_root() / "eval_hm";
        REQUIRE(run(args + " --heatmaps --output " + quote(out2.string())).exit_code == 0);
        CHECK(tree_of(out2 / "heatmaps").size() == 6);  // 3 normal + 3 anomalous
    }

    SUBCASE("a missing checkpoint is a user error") {
        const RunResult bad = run("eval --config " + quote(data_config()) +
                                  " --checkpoint /no/ckpt.bin --output /tmp/unused");
        CHECK(bad.exit_code == 2);
        CHECK(bad.err.find("ckpt.bin") != std::string::npos);
    }
}

TEST_CASE("score prints one line per image and survives unreadable files") {
    const fs::path out = scratch_root() / "score_a";
    const std::string good = (dataset_root() / "synthetic/test/good/0000.png").string();
    const std::string defect = (dataset_root() / "synthetic/test/defect/0001.png").string();
    const RunResult r = run("score --config " + quote(data_config()) + " --checkpoint " +
                            quote(checkpoint()) + " --output " + quote(out.string()) + " " +
                            quote(good) + " " + quote(defect) + " /unreadable.png");
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);

    const auto lines = lines_of(r.out);
    REQUIRE(lines.size() == 2);  // the unreadable file is skipped, not fatal
    CHECK(lines[0].find(good + "\t") == 0);
    CHECK(lines[1].find(defect + "\t") == 0);
    CHECK(r.err.find("/unreadable.png") != std::string::npos);

    CHECK(fs::exists(out / "maps" / "0000_0000.raw"));
    CHECK(fs::exists(out / "maps" / "0000_0000.json"));
    CHECK(fs::exists(out / "maps" / "0001_0001.raw"));
    CHECK(fs::exists(out / "heatmaps" / "0001_0001.png"));

    SUBCASE("an empty image list is rejected") {
        const RunResult bad = run("score --config " + quote(data_config()) +
                                  " --checkpoint " + quote(checkpoint()));
        CHECK(bad.exit_code == 2);
    }
}

TEST_CASE("ablate sweeps schema-stable grids and isolates cell failures") {
    const fs::path out = scratch_root() / "abl_var";
    // One pre-existing file where a cell wants its directory → that cell
    // fails; the grid must continue and still exit 0.
    fs::create_directories(out);
    std::ofstream(out / "variant_D") << "in the way";

    const RunResult r = run("ablate --config " + quote(data_config()) + " --output " +
                            quote(out.string()) + " --grid variants --jobs 2" + kFast);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    CHECK(r.err.find("cell D failed") != std::string::npos);

    const auto rows = lines_of(slurp(out / "ablation.csv"));
    REQUIRE(rows.size() == 9);  // header + 8 variants
    CHECK(rows[0] == "variant,status,final_loss,i_auroc,p_auroc,aupro,best_i_auroc");
    const char* expected[] = {"A", "B", "C", "D", "E-", "E", "B+", "OURS"};
    for (int i = 0; i < 8; ++i) {
        CHECK(rows[i + 1].rfind(std::string(expected[i]) + ",", 0) == 0);
        const bool failed = rows[i + 1].find(",FAILED,") != std::string::npos;
        CHECK(failed == (i == 3));
    }
    CHECK(fs::exists(out / "variant_B" / "checkpoint_final.bin"));
    CHECK(fs::exists(out / "variant_B" / "config.toml"));

    SUBCASE("the alpha grid emits seven rows around the mining schedule") {
        const fs::path out2 = scratch_root() / "abl_alpha";
        const RunResult r2 = run("ablate --config " + quote(data_config()) + " --output " +
                                 quote(out2.string()) + " --grid alpha iterations=1 "
                                 "batch_size=2 eval_every=1");
        REQUIRE_MESSAGE(r2.exit_code == 0, r2.err);
        const auto rows2 = lines_of(slurp(out2 / "ablation.csv"));
        REQUIRE(rows2.size() == 8);  // header + 7 alpha values
        CHECK(rows2[0] == "alpha,status,final_loss,i_auroc,p_auroc,aupro,best_i_auroc");
        const char* alphas[] = {"-2", "-1", "0", "0.5", "1", "1.5", "2"};
        for (int i = 0; i < 7; ++i)
            CHECK(rows2[i + 1].rfind(std::string(alphas[i]) + ",OK,", 0) == 0);
        // every cell trains the paired hard-mining config
        CHECK(slurp(out2 / "alpha_-2" / "config.toml").find("variant = \"OURS\"") !=
              std::string::npos);
        CHECK(slurp(out2 / "alpha_2" / "config.toml").find("alpha_end = 2") !=
              std::string::npos);
    }

    SUBCASE("an unknown grid is rejected") {
        CHECK(run("ablate --config " + quote(data_config()) +
                  " --output /tmp/unused --grid sandwiches").exit_code == 2);
    }
}

TEST_CASE("aggregate trains each seed and tabulates mean and spread") {
    const fs::path out = scratch_root() / "agg";
    const RunResult r = run("aggregate --config " + quote(data_config()) + " --output " +
                            quote(out.string()) + " --seeds 3,4 variant=B" + kFast);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    CHECK(fs::exists(out / "seed_3" / "checkpoint_final.bin"));
    CHECK(fs::exists(out / "seed_4" / "checkpoint_final.bin"));

    const auto rows = lines_of(slurp(out / "aggregate.csv"));
    REQUIRE(rows.size() >= 2);
    CHECK(rows[0] == "metric,mean,std");
    const auto agg = nlohmann::json::parse(slurp(out / "aggregate.json"));
    CHECK(agg["metrics"]["i_auroc"]["mean"].is_number());
    CHECK(agg["metrics"]["i_auroc"]["std"].is_number());
    CHECK(agg["seeds"].size() == 2);

    SUBCASE("fewer than two seeds is a user error") {
        CHECK(run("aggregate --config " + quote(data_config()) +
                  " --output /tmp/unused --seeds 3").exit_code == 2);
    }
}
