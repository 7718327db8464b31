#include <cmath>
#include <limits>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "fcad/engine.hpp"
#include "json.hpp"
#include "oracles.hpp"

using namespace fcad;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("fcad_engine_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// One tiny generated dataset shared by the training cases.
const DatasetSpec& tiny_dataset() {
    static DatasetSpec spec = [] {
        fs::path root = fresh_dir("dataset");
        return make_synthetic_dataset(11, 8, 4, 4, 32, root.string());
    }();
    return spec;
}

RunConfig tiny_config(VariantName v, int iterations, uint64_t seed) {
    RunConfig c;
    c.variant = make_variant(v);
    c.backbone_id = BackboneId::kSmall18;
    c.dataset = tiny_dataset();
    c.iterations = iterations;
    c.batch_size = 4;
    c.seed = seed;
    c.eval_every = 3;
    return c;
}

std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(bool(in));
    std::vector<json> lines;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(json::parse(line));
    return lines;
}

}  // namespace

TEST_CASE("feature diversity") {
    SUBCASE("constant nonzero map scores zero") {
        Tensor t({2, 4, 3, 3}, 0.7f);
        CHECK(feature_diversity(t) <= 1e-12);
    }
    SUBCASE("alternating orthogonal unit points score one half") {
        Tensor t({1, 2, 4, 4});
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                const bool first = (y * 4 + x) % 2 == 0;
                t.at(0, 0, y, x) = first ? 1.0f : 0.0f;
                t.at(0, 1, y, x) = first ? 0.0f : 1.0f;
            }
        CHECK(feature_diversity(t) == doctest::Approx(0.5).epsilon(1e-6));
    }
    SUBCASE("invariant under channel permutation") {
        Rng rng(51);
        Tensor t({2, 6, 5, 5});
        rng.fill_normal(t);
        const double base = feature_diversity(t);
        Tensor p(t.shape);
        const int perm[6] = {3, 5, 0, 4, 1, 2};
        for (int i = 0; i < 2; ++i)
            for (int c = 0; c < 6; ++c)
                for (int y = 0; y < 5; ++y)
                    for (int x = 0; x < 5; ++x) p.at(i, perm[c], y, x) = t.at(i, c, y, x);
        CHECK(feature_diversity(p) == doctest::Approx(base).epsilon(1e-12));
    }
    SUBCASE("zero vectors stay finite") {
        Tensor t({1, 3, 2, 2});
        CHECK(std::isfinite(feature_diversity(t)));
    }
}

TEST_CASE("optimizer") {
    SUBCASE("two steps match a hand-rolled double-precision reference") {
        Tensor p({3}), g({3});
        p.v = {1.0f, -2.0f, 0.5f};
        std::vector<nn::ParamRef> refs = {{"p", &p, &g}};
        const double lr = 0.01, wd = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
        AdamW opt({{refs, lr, wd}}, b1, b2, eps);

        std::vector<double> rp = {1.0, -2.0, 0.5}, m(3, 0.0), v(3, 0.0);
        const float grads[2][3] = {{0.3f, -0.1f, 0.7f}, {-0.2f, 0.4f, 0.05f}};
        for (int t = 1; t <= 2; ++t) {
            for (int j = 0; j < 3; ++j) g.v[static_cast<size_t>(j)] = grads[t - 1][j];
            opt.step();
            for (int j = 0; j < 3; ++j) {
                const double gj = grads[t - 1][j];
                m[static_cast<size_t>(j)] = b1 * m[static_cast<size_t>(j)] + (1 - b1) * gj;
                v[static_cast<size_t>(j)] = b2 * v[static_cast<size_t>(j)] + (1 - b2) * gj * gj;
                double pj = rp[static_cast<size_t>(j)];
                pj -= lr * wd * pj;
                pj -= lr * (m[static_cast<size_t>(j)] / (1 - std::pow(b1, t))) /
                      (std::sqrt(v[static_cast<size_t>(j)] / (1 - std::pow(b2, t))) + eps);
                rp[static_cast<size_t>(j)] = pj;
            }
        }
        for (int j = 0; j < 3; ++j)
            CHECK(p.v[static_cast<size_t>(j)] ==
                  doctest::Approx(rp[static_cast<size_t>(j)]).epsilon(1e-6));
        CHECK(opt.t() == 2);
    }
    SUBCASE("zero gradient leaves only the decoupled decay") {
        Tensor p({2}), g({2});
        p.v = {2.0f, -4.0f};
        std::vector<nn::ParamRef> refs = {{"p", &p, &g}};
        AdamW opt({{refs, 0.1, 0.01}});
        opt.step();
        CHECK(p.v[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-7));
        CHECK(p.v[1] == doctest::Approx(-4.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-7));
    }
    SUBCASE("per-group learning rates") {
        Tensor pa({1}), ga({1}), pb({1}), gb({1});
        pa.v = {1.0f};
        pb.v = {1.0f};
        ga.v = {1.0f};
        gb.v = {1.0f};
        AdamW opt({{{{"a", &pa, &ga}}, 0.1, 0.0}, {{{"b", &pb, &gb}}, 0.001, 0.0}});
        opt.step();
        // first step of this family moves a parameter by ~lr
        CHECK(pa.v[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-4));
        CHECK(pb.v[0] == doctest::Approx(1.0 - 0.001).epsilon(1e-4));
    }
}

TEST_CASE("optimizer grouping matches the graph's trainable sets") {
    auto build_groups = [](VariantName v) {
        ModelGraph graph(make_variant(v), BackboneId::kSmall18, 3);
        return graph.trainable_parameters();
    };
    SUBCASE("encoder optimized: two disjoint groups cover everything") {
        ModelGraph graph(make_variant(VariantName::kOurs), BackboneId::kSmall18, 3);
        auto groups = graph.trainable_parameters();
        CHECK(!groups.new_params.empty());
        CHECK(!groups.pretrained_params.empty());
        std::set<const Tensor*> seen;
        for (const auto& p : groups.new_params) CHECK(seen.insert(p.value).second);
        for (const auto& p : groups.pretrained_params) CHECK(seen.insert(p.value).second);
        std::vector<nn::ParamRef> pb, pd, pe;
        graph.bottleneck().collect("bottleneck", pb);
        graph.decoder().collect("decoder", pd);
        graph.encoder().collect("encoder", pe);
        CHECK(groups.new_params.size() == pb.size() + pd.size());
        CHECK(groups.pretrained_params.size() == pe.size());
    }
    SUBCASE("encoder frozen: pretrained group is empty") {
        auto groups = build_groups(VariantName::kB);
        CHECK(!groups.new_params.empty());
        CHECK(groups.pretrained_params.empty());
    }
}

TEST_CASE("hard-mined loss value equals the plain global value on a live graph") {
    ModelGraph graph(make_variant(VariantName::kOurs), BackboneId::kSmall18, 5);
    Rng rng(52);
    Tensor x({2, 3, 32, 32});
    rng.fill_normal(x);
    PairSet pairs = graph.forward(x, true);
    double plain = 0.0, mined = 0.0;
    for (const auto& pass : pairs.passes) {
        plain += loss_global(pass.target, pass.recon, true, false).value;
        mined += loss_global_hm(pass.target, pass.recon, 0.5f, true, false).value;
    }
    CHECK(mined == plain);
}

TEST_CASE("training loop") {
    SUBCASE("writes checkpoints, logs every iteration, tracks the schedule") {
        fs::path out = fresh_dir("train_basic");
        RunConfig cfg = tiny_config(VariantName::kOurs, 10, 21);
        cfg.hard_mining.warmup_fraction = 0.5;  // schedule visibly moves over 10 iters
        TrainResult tr = train(cfg, out.string());

        CHECK(fs::exists(tr.final_checkpoint));
        CHECK(fs::exists(tr.final_checkpoint + ".json"));
        CHECK(fs::exists(tr.log_path));
        CHECK(std::isfinite(tr.final_loss));
        REQUIRE(tr.final_report.has_value());
        CHECK(tr.final_report->overall.n_images == 8);
        CHECK(!tr.best_checkpoint.empty());
        CHECK(fs::exists(tr.best_checkpoint));
        CHECK(tr.best_iteration >= 1);

        auto lines = read_jsonl(tr.log_path);
        int iter_lines = 0, probe_lines = 0, eval_lines = 0;
        int expect_it = 0;
        for (const auto& l : lines) {
            if (l.contains("iteration")) {
                CHECK(l["iteration"].get<int>() == expect_it);
                CHECK(std::isfinite(l["loss"].get<double>()));
                REQUIRE(l.contains("alpha"));
                const double a = l["alpha"].get<double>();
                CHECK(a == alpha_schedule(expect_it, cfg.iterations, cfg.hard_mining));
                ++expect_it;
                ++iter_lines;
            } else if (l.contains("probe_iteration")) {
                CHECK(l["diversity"].size() == 3);
                ++probe_lines;
            } else if (l.contains("eval_iteration")) {
                ++eval_lines;
            }
        }
        CHECK(iter_lines == 10);
        CHECK(probe_lines >= 2);  // initial + at least the final probe
        CHECK(eval_lines >= 3);   // every 3 iterations plus the final one
        CHECK(tr.diversity.points.front().iteration == 0);
        CHECK(tr.diversity.points.back().iteration == 10);

        SUBCASE("checkpoint round trip reproduces the evaluation") {
            EvalReport again = evaluate_checkpoint(tr.final_checkpoint, cfg.dataset,
                                                   cfg.smoothing_sigma);
            CHECK(again.overall.i_auroc == tr.final_report->overall.i_auroc);
            CHECK(report_to_json(again) == report_to_json(*tr.final_report));
        }
    }
    SUBCASE("alpha is null for plain-loss variants") {
        fs::path out = fresh_dir("train_b");
        RunConfig cfg = tiny_config(VariantName::kB, 4, 22);
        TrainResult tr = train(cfg, out.string(), /*periodic_eval=*/false);
        CHECK(tr.best_checkpoint.empty());
        CHECK(!tr.final_report.has_value());
        for (const auto& l : read_jsonl(tr.log_path))
            if (l.contains("iteration")) CHECK(l["alpha"].is_null());
    }
    SUBCASE("same seed, same config: identical final loss") {
        RunConfig cfg = tiny_config(VariantName::kE, 5, 23);
        TrainResult a = train(cfg, fresh_dir("det_a").string(), false);
        TrainResult b = train(cfg, fresh_dir("det_b").string(), false);
        CHECK(std::abs(a.final_loss - b.final_loss) <= 1e-6);
        ModelGraph ga = graph_from_checkpoint(a.final_checkpoint);
        ModelGraph gb = graph_from_checkpoint(b.final_checkpoint);
        CHECK(param_checksum(ga.decoder()) == param_checksum(gb.decoder()));
        CHECK(param_checksum(ga.encoder()) == param_checksum(gb.encoder()));
    }
    SUBCASE("batch size larger than the training set is rejected") {
        RunConfig cfg = tiny_config(VariantName::kB, 2, 24);
        cfg.batch_size = 64;
        CHECK_THROWS_AS(train(cfg, fresh_dir("reject").string()), ConfigError);
    }
    SUBCASE("non-finite loss aborts with an iteration diagnostic") {
        // Note: an exploding learning rate alone cannot make this loss go
        // non-finite — normalization layers rescale any weight magnitude,
        // rectifiers flush NaN comparisons to zero, and the cosine epsilon
        // absorbs zero-norm vectors — so the guard is exercised directly.
        ModelGraph graph(make_variant(VariantName::kB), BackboneId::kSmall18, 3);
        check_loss_finite(1.25, 7, graph);  // finite: must not throw
        for (double bad : {std::nan(""), std::numeric_limits<double>::infinity()}) {
            try {
                check_loss_finite(bad, 7, graph);
                FAIL("expected a non-finite-loss abort");
            } catch (const Error& e) {
                const std::string msg = e.what();
                CHECK(msg.find("iteration 7") != std::string::npos);
                CHECK(msg.find("decoder") != std::string::npos);
            }
        }
    }
}

TEST_CASE("evaluation") {
    SUBCASE("deterministic on a fixed graph") {
        ModelGraph graph(make_variant(VariantName::kE), BackboneId::kSmall18, 9);
        auto testp = load_packed(tiny_dataset(), Split::kTest);
        EvalReport a = evaluate(graph, testp, ScoreReduction::kMax, std::nullopt);
        EvalReport b = evaluate(graph, testp, ScoreReduction::kMax, std::nullopt);
        CHECK(report_to_json(a) == report_to_json(b));
        CHECK(a.overall.n_images == 8);
        CHECK(a.overall.p_auroc.has_value());
        CHECK(a.overall.aupro.has_value());
    }
    SUBCASE("untrained model scores near chance") {
        ModelGraph graph(make_variant(VariantName::kOurs), BackboneId::kSmall18, 77);
        auto testp = load_packed(tiny_dataset(), Split::kTest);
        EvalReport rep = evaluate(graph, testp, ScoreReduction::kMax, std::nullopt);
        CHECK(rep.overall.i_auroc >= 0.0);
        CHECK(rep.overall.i_auroc <= 1.0);
    }
    SUBCASE("architecture mismatch is rejected") {
        fs::path out = fresh_dir("mismatch");
        ModelGraph small(make_variant(VariantName::kB), BackboneId::kSmall18, 3);
        save_graph_checkpoint(small, (out / "ck.bin").string());
        // tamper: claim a different backbone in the sidecar
        {
            std::ifstream in(out / "ck.bin.json");
            json meta = json::parse(in);
            meta["backbone"] = "resnet50";
            std::ofstream outf(out / "ck.bin.json");
            outf << meta.dump(2) << "\n";
        }
        CHECK_THROWS_AS(graph_from_checkpoint((out / "ck.bin").string()), IoError);
    }
}

TEST_CASE("multi-seed aggregation") {
    fs::path out = fresh_dir("multiseed");
    RunConfig cfg = tiny_config(VariantName::kB, 3, 0);
    cfg.eval_every = 100;  // only the final eval triggers

    MultiSeedReport rep = multi_seed(cfg, {5, 6}, out.string());
    REQUIRE(rep.per_seed.size() == 2);
    REQUIRE(rep.overall.count("i_auroc") == 1);
    const auto agg = rep.overall.at("i_auroc");
    const double a = rep.per_seed[0].overall.i_auroc, b = rep.per_seed[1].overall.i_auroc;
    CHECK(agg.mean == doctest::Approx((a + b) / 2).epsilon(1e-12));
    CHECK(agg.stddev ==
          doctest::Approx(std::sqrt((a - agg.mean) * (a - agg.mean) +
                                    (b - agg.mean) * (b - agg.mean)))
              .epsilon(1e-9));
    CHECK(fs::exists(out / "seed_5" / "checkpoint_final.bin"));
    CHECK(fs::exists(out / "seed_6" / "checkpoint_final.bin"));

    SUBCASE("identical seeds give zero spread") {
        MultiSeedReport same = multi_seed(cfg, {5, 5}, fresh_dir("samepair").string());
        CHECK(same.overall.at("i_auroc").stddev == 0.0);
    }
    SUBCASE("serializers are stable") {
        auto j1 = multi_seed_to_json(rep);
        auto c1 = multi_seed_to_csv(rep);
        CHECK(j1.find("i_auroc") != std::string::npos);
        CHECK(c1.rfind("metric,mean,std\n", 0) == 0);
        CHECK(json::parse(j1)["seeds"].size() == 2);
    }
    SUBCASE("fewer than two seeds rejected") {
        CHECK_THROWS_AS(multi_seed(cfg, {1}, fresh_dir("oneseed").string()), ConfigError);
    }
}
