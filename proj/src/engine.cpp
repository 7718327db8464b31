#include "fcad/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace fcad {

void validate(const RunConfig& c) {
    check_config(c.iterations > 0, "config: iterations must be positive");
    check_config(c.batch_size > 0, "config: batch_size must be positive");
    check_config(c.lr_new > 0.0, "config: lr_new must be positive");
    check_config(c.lr_pretrained >= 0.0, "config: lr_pretrained must be non-negative");
    check_config(c.weight_decay >= 0.0, "config: weight_decay must be non-negative");
    check_config(c.eval_every > 0, "config: eval_every must be positive");
    check_config(c.betas.first >= 0.0 && c.betas.first < 1.0 && c.betas.second >= 0.0 &&
                     c.betas.second < 1.0,
                 "config: betas must lie in [0, 1)");
    check_config(c.hard_mining.warmup_fraction > 0.0 && c.hard_mining.warmup_fraction <= 1.0,
                 "config: hard-mining warmup_fraction must lie in (0, 1]");
    if (c.smoothing_sigma)
        check_config(*c.smoothing_sigma > 0.0, "config: smoothing_sigma must be positive");
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

AdamW::AdamW(std::vector<Group> groups, double beta1, double beta2, double eps)
    : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    check_config(beta1_ >= 0.0 && beta1_ < 1.0 && beta2_ >= 0.0 && beta2_ < 1.0,
                 "optimizer: betas must lie in [0, 1)");
    m_.resize(groups_.size());
    v_.resize(groups_.size());
    for (size_t g = 0; g < groups_.size(); ++g) {
        for (const auto& p : groups_[g].params) {
            check_config(p.value != nullptr && p.grad != nullptr,
                         "optimizer: parameter '" + p.name + "' has no gradient storage");
            m_[g].emplace_back(p.value->shape);
            v_[g].emplace_back(p.value->shape);
        }
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t g = 0; g < groups_.size(); ++g) {
        const double lr = groups_[g].lr;
        const double wd = groups_[g].weight_decay;
        for (size_t i = 0; i < groups_[g].params.size(); ++i) {
            auto& p = *groups_[g].params[i].value;
            const auto& grad = *groups_[g].params[i].grad;
            auto& m = m_[g][i];
            auto& v = v_[g][i];
            for (size_t j = 0; j < p.numel(); ++j) {
                const double gj = grad.v[j];
                const double mj = beta1_ * m.v[j] + (1.0 - beta1_) * gj;
                const double vj = beta2_ * v.v[j] + (1.0 - beta2_) * gj * gj;
                m.v[j] = static_cast<float>(mj);
                v.v[j] = static_cast<float>(vj);
                double pj = p.v[j];
                pj -= lr * wd * pj;  // decoupled decay
                pj -= lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps_);
                p.v[j] = static_cast<float>(pj);
            }
        }
    }
}

void AdamW::zero_grad() {
    for (auto& g : groups_)
        for (auto& p : g.params) p.grad->zero();
}

// ---------------------------------------------------------------------------
// Diversity diagnostic
// ---------------------------------------------------------------------------

double feature_diversity(const Tensor& stage) {
    check_shape(stage.rank() == 4, "feature_diversity: stage must be (N, C, H, W), got " +
                                       stage.shape_str());
    const int n = stage.dim(0), c = stage.dim(1);
    const size_t plane = static_cast<size_t>(stage.dim(2)) * stage.dim(3);
    const size_t points = static_cast<size_t>(n) * plane;
    check_shape(points >= 1 && c >= 1, "feature_diversity: empty stage");

    // two passes (mean, then centered moments) so a constant map lands at
    // zero instead of picking up single-pass cancellation noise
    std::vector<double> unit(points * static_cast<size_t>(c));
    for (int i = 0; i < n; ++i) {
        const size_t img = static_cast<size_t>(i) * c * plane;
        for (size_t p = 0; p < plane; ++p) {
            double norm2 = 0.0;
            for (int ch = 0; ch < c; ++ch) {
                const double x = stage.v[img + static_cast<size_t>(ch) * plane + p];
                norm2 += x * x;
            }
            const double inv = 1.0 / (std::sqrt(norm2) + 1e-8);
            for (int ch = 0; ch < c; ++ch)
                unit[static_cast<size_t>(ch) * points + static_cast<size_t>(i) * plane + p] =
                    stage.v[img + static_cast<size_t>(ch) * plane + p] * inv;
        }
    }
    double acc = 0.0;
    for (int ch = 0; ch < c; ++ch) {
        const double* u = unit.data() + static_cast<size_t>(ch) * points;
        double mean = 0.0;
        for (size_t p = 0; p < points; ++p) mean += u[p];
        mean /= static_cast<double>(points);
        double var = 0.0;
        for (size_t p = 0; p < points; ++p) var += (u[p] - mean) * (u[p] - mean);
        acc += std::sqrt(var / static_cast<double>(points));
    }
    return acc / c;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

Tensor gather_rows(const Tensor& images, const std::vector<int>& order, int from, int count) {
    const size_t stride = images.numel() / static_cast<size_t>(images.dim(0));
    std::vector<int> shape = images.shape;
    shape[0] = count;
    Tensor out(shape);
    for (int i = 0; i < count; ++i)
        std::memcpy(out.v.data() + static_cast<size_t>(i) * stride,
                    images.v.data() + static_cast<size_t>(order[static_cast<size_t>(from + i)]) *
                                          stride,
                    stride * sizeof(float));
    return out;
}

Tensor slice_rows(const Tensor& images, int from, int count) {
    std::vector<int> idx(static_cast<size_t>(count));
    std::iota(idx.begin(), idx.end(), from);
    return gather_rows(images, idx, 0, count);
}

struct LossOut {
    double value = 0.0;
    std::vector<PassGrads> grads;
};

LossOut pass_losses(const PairSet& pairs, const ConfigVariant& var, float alpha,
                    bool want_grads) {
    LossOut out;
    for (const auto& pass : pairs.passes) {
        LossResult<float> lr;
        switch (var.loss_kind) {
            case LossKind::kRegional:
                lr = loss_regional(pass.target, pass.recon, want_grads);
                break;
            case LossKind::kGlobal:
                lr = loss_global(pass.target, pass.recon, var.stop_gradient, want_grads);
                break;
            case LossKind::kGlobalHM:
                lr = loss_global_hm(pass.target, pass.recon, alpha, var.stop_gradient,
                                    want_grads);
                break;
        }
        out.value += lr.value;
        if (want_grads) out.grads.push_back({std::move(lr.grad_recon), std::move(lr.grad_target)});
    }
    return out;
}

double params_l2(std::vector<nn::ParamRef>& ps) {
    double acc = 0.0;
    for (const auto& p : ps)
        for (float x : p.value->v) acc += static_cast<double>(x) * x;
    return std::sqrt(acc);
}

std::string module_norms(ModelGraph& graph) {
    char buf[160];
    std::vector<nn::ParamRef> pe, pb, pd;
    graph.encoder().collect("encoder", pe);
    graph.bottleneck().collect("bottleneck", pb);
    graph.decoder().collect("decoder", pd);
    std::snprintf(buf, sizeof buf, "|encoder|=%.4g |bottleneck|=%.4g |decoder|=%.4g",
                  params_l2(pe), params_l2(pb), params_l2(pd));
    return buf;
}

}  // namespace

void check_loss_finite(double value, int iteration, ModelGraph& graph) {
    if (std::isfinite(value)) return;
    throw Error("train: non-finite loss at iteration " + std::to_string(iteration) +
                "; parameter norms: " + module_norms(graph));
}

TrainResult train(const RunConfig& config, const std::string& output_dir, bool periodic_eval) {
    validate(config);
    fs::create_directories(output_dir);

    auto trainp = load_packed(config.dataset, Split::kTrain);
    const int n = trainp.n();
    check_config(n > 0, "train: training split is empty");
    check_config(config.batch_size <= n,
                 "train: batch_size " + std::to_string(config.batch_size) +
                     " exceeds the training set size " + std::to_string(n));

    std::optional<PackedSplit> testp;
    if (periodic_eval) {
        try {
            testp = load_packed(config.dataset, Split::kTest);
        } catch (const Error&) {
            testp.reset();  // train-only tree: no periodic evaluation
        }
    }

    ModelGraph graph(config.variant, config.backbone_id, config.seed, config.bn_policy);
    auto groups = graph.trainable_parameters();
    std::vector<AdamW::Group> og;
    og.push_back({groups.new_params, config.lr_new, config.weight_decay});
    if (!groups.pretrained_params.empty())
        og.push_back({groups.pretrained_params, config.lr_pretrained, config.weight_decay});
    AdamW opt(std::move(og), config.betas.first, config.betas.second);

    TrainResult result;
    result.log_path = (fs::path(output_dir) / "train_log.jsonl").string();
    std::ofstream log(result.log_path);
    if (!log) throw IoError("train: cannot open log file " + result.log_path);

    // fixed probe batch for the diversity diagnostic: the first training
    // images in their deterministic on-disk order, scored in eval mode
    const int probe_n = std::min(n, 8);
    const Tensor probe = slice_rows(trainp.images, 0, probe_n);
    auto probe_diversity = [&](int completed_steps) {
        Pyramid stages = graph.encoder().forward(probe, nn::BnMode::kRunning, false);
        DiversityPoint pt;
        pt.iteration = completed_steps;
        for (const auto& s : stages) pt.per_stage.push_back(feature_diversity(s));
        result.diversity.points.push_back(pt);
        log << json{{"probe_iteration", completed_steps}, {"diversity", pt.per_stage}}.dump()
            << "\n";
    };
    probe_diversity(0);

    Rng shuffle_rng = Rng(config.seed).fork(0x5a3d1eULL);
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    int cursor = n;  // forces a shuffle before the first batch

    const bool hm = config.variant.loss_kind == LossKind::kGlobalHM;
    double best_auroc = -1.0;
    double loss_value = 0.0;

    for (int it = 0; it < config.iterations; ++it) {
        if (cursor + config.batch_size > n) {
            for (int i = n - 1; i > 0; --i)
                std::swap(order[static_cast<size_t>(i)],
                          order[static_cast<size_t>(shuffle_rng.uniform_int(0, i))]);
            cursor = 0;
        }
        const Tensor batch = gather_rows(trainp.images, order, cursor, config.batch_size);
        cursor += config.batch_size;

        PairSet pairs = graph.forward(batch, true);
        const double alpha =
            hm ? alpha_schedule(it, config.iterations, config.hard_mining) : 0.0;
        LossOut lo = pass_losses(pairs, config.variant, static_cast<float>(alpha), true);
        loss_value = lo.value;
        check_loss_finite(loss_value, it, graph);

        opt.zero_grad();
        graph.backward(lo.grads);
        opt.step();

        json line = {{"iteration", it}, {"loss", loss_value}};
        if (hm)
            line["alpha"] = alpha;
        else
            line["alpha"] = nullptr;
        log << line.dump() << "\n";

        const bool last = it + 1 == config.iterations;
        if ((it + 1) % config.eval_every == 0 || last) {
            probe_diversity(it + 1);
            if (testp) {
                EvalReport rep = evaluate(graph, *testp, config.dataset.score_reduction,
                                          config.smoothing_sigma);
                log << json{{"eval_iteration", it + 1},
                            {"i_auroc", rep.overall.i_auroc}}
                           .dump()
                    << "\n";
                if (rep.overall.i_auroc > best_auroc) {
                    best_auroc = rep.overall.i_auroc;
                    result.best_i_auroc = best_auroc;
                    result.best_iteration = it + 1;
                    result.best_checkpoint =
                        (fs::path(output_dir) / "checkpoint_best.bin").string();
                    save_graph_checkpoint(graph, result.best_checkpoint);
                }
                if (last) result.final_report = std::move(rep);
            }
        }
    }

    result.final_loss = loss_value;
    result.final_checkpoint = (fs::path(output_dir) / "checkpoint_final.bin").string();
    save_graph_checkpoint(graph, result.final_checkpoint);
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

ScoredSplit score_split(ModelGraph& graph, const Tensor& images, ScoreReduction reduction,
                        std::optional<double> smoothing_sigma) {
    check_shape(images.rank() == 4, "score_split: images must be (N, 3, S, S)");
    const int n = images.dim(0), size = images.dim(2);
    ScoredSplit out;
    const int bs = std::min(16, std::max(1, n));
    for (int at = 0; at < n; at += bs) {
        const int count = std::min(bs, n - at);
        const Tensor batch = slice_rows(images, at, count);
        PairSet pairs = graph.forward(batch, false);
        const Tensor maps = assemble_score_map(pairs, size, size, smoothing_sigma);
        const auto scores = image_scores(maps, reduction);
        const size_t plane = static_cast<size_t>(size) * size;
        for (int i = 0; i < count; ++i) {
            out.scores.push_back(scores[static_cast<size_t>(i)]);
            Tensor m({size, size});
            std::memcpy(m.v.data(), maps.v.data() + static_cast<size_t>(i) * plane,
                        plane * sizeof(float));
            out.maps.push_back(std::move(m));
        }
    }
    return out;
}

EvalReport evaluate(ModelGraph& graph, const PackedSplit& test, ScoreReduction reduction,
                    std::optional<double> smoothing_sigma) {
    check_config(test.n() > 0, "evaluate: empty test split");
    auto ss = score_split(graph, test.images, reduction, smoothing_sigma);
    if (test.has_masks)
        return compute_eval_report(ss.scores, test.labels, test.categories, ss.maps, test.masks);
    return compute_eval_report(ss.scores, test.labels, test.categories, {}, {});
}

// ---------------------------------------------------------------------------
// Checkpoint round trip
// ---------------------------------------------------------------------------

void save_graph_checkpoint(ModelGraph& graph, const std::string& path,
                           const std::string& extra_meta_json) {
    std::vector<nn::ParamRef> ps;
    std::vector<nn::BufRef> bs;
    graph.collect_state(ps, bs);
    json meta = {
        {"format", "fcad-graph-v1"},
        {"variant", variant_name(graph.variant().name)},
        {"backbone", backbone_name(graph.backbone())},
        {"bn_policy", bn_policy_name(graph.encoder_policy())},
    };
    if (!extra_meta_json.empty()) meta["run"] = json::parse(extra_meta_json);
    save_checkpoint(path, ps, bs, meta.dump(2));
}

ModelGraph graph_from_checkpoint(const std::string& checkpoint_path) {
    Checkpoint ck = load_checkpoint(checkpoint_path);
    json meta;
    try {
        meta = json::parse(ck.meta_json.empty() ? "{}" : ck.meta_json);
    } catch (const json::exception&) {
        throw IoError("checkpoint sidecar is not valid JSON: " + checkpoint_path + ".json");
    }
    if (!meta.contains("variant") || !meta.contains("backbone"))
        throw IoError("checkpoint sidecar lacks variant/backbone fields: " + checkpoint_path +
                      ".json");
    ModelGraph graph(make_variant(parse_variant(meta["variant"].get<std::string>())),
                     parse_backbone_id(meta["backbone"].get<std::string>()),
                     /*seed=*/0,
                     parse_bn_policy(meta.value("bn_policy", "train_mode")));
    std::vector<nn::ParamRef> ps;
    std::vector<nn::BufRef> bs;
    graph.collect_state(ps, bs);
    assign_from_checkpoint(ck, ps, bs);
    return graph;
}

EvalReport evaluate_checkpoint(const std::string& checkpoint_path, const DatasetSpec& dataset,
                               std::optional<double> smoothing_sigma) {
    ModelGraph graph = graph_from_checkpoint(checkpoint_path);
    auto testp = load_packed(dataset, Split::kTest);
    return evaluate(graph, testp, dataset.score_reduction, smoothing_sigma);
}

// ---------------------------------------------------------------------------
// Multi-seed aggregation
// ---------------------------------------------------------------------------

namespace {

AggregateMetric aggregate(const std::vector<double>& vals) {
    const double n = static_cast<double>(vals.size());
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    return {mean, vals.size() >= 2 ? std::sqrt(ss / (n - 1.0)) : 0.0};
}

}  // namespace

MultiSeedReport multi_seed(const RunConfig& base, const std::vector<uint64_t>& seeds,
                           const std::string& output_dir) {
    check_config(seeds.size() >= 2, "multi_seed: need at least 2 seeds");
    MultiSeedReport rep;
    rep.seeds = seeds;
    for (uint64_t s : seeds) {
        RunConfig c = base;
        c.seed = s;
        const std::string dir = (fs::path(output_dir) / ("seed_" + std::to_string(s))).string();
        TrainResult tr = train(c, dir, /*periodic_eval=*/true);
        EvalReport er = tr.final_report
                            ? *tr.final_report
                            : evaluate_checkpoint(tr.final_checkpoint, c.dataset,
                                                  c.smoothing_sigma);
        rep.per_seed.push_back(std::move(er));
    }

    std::vector<double> i_auroc, p_auroc, aupro_v, f1, acc;
    bool all_pixel = true;
    for (const auto& er : rep.per_seed) {
        i_auroc.push_back(er.overall.i_auroc);
        if (er.overall.f1) f1.push_back(*er.overall.f1);
        if (er.overall.acc) acc.push_back(*er.overall.acc);
        if (er.overall.p_auroc && er.overall.aupro) {
            p_auroc.push_back(*er.overall.p_auroc);
            aupro_v.push_back(*er.overall.aupro);
        } else {
            all_pixel = false;
        }
    }
    rep.overall["i_auroc"] = aggregate(i_auroc);
    if (f1.size() == rep.per_seed.size()) rep.overall["f1"] = aggregate(f1);
    if (acc.size() == rep.per_seed.size()) rep.overall["acc"] = aggregate(acc);
    if (all_pixel && !p_auroc.empty()) {
        rep.overall["p_auroc"] = aggregate(p_auroc);
        rep.overall["aupro"] = aggregate(aupro_v);
    }
    return rep;
}

std::string multi_seed_to_json(const MultiSeedReport& report) {
    json j;
    j["seeds"] = report.seeds;
    for (const auto& [name, agg] : report.overall)
        j["metrics"][name] = {{"mean", agg.mean}, {"std", agg.stddev}};
    for (const auto& er : report.per_seed) {
        json e = {{"i_auroc", er.overall.i_auroc}};
        if (er.overall.p_auroc) e["p_auroc"] = *er.overall.p_auroc;
        if (er.overall.aupro) e["aupro"] = *er.overall.aupro;
        if (er.overall.f1) e["f1"] = *er.overall.f1;
        if (er.overall.acc) e["acc"] = *er.overall.acc;
        j["per_seed"].push_back(e);
    }
    return j.dump(2);
}

std::string multi_seed_to_csv(const MultiSeedReport& report) {
    std::string out = "metric,mean,std\n";
    char buf[96];
    for (const auto& [name, agg] : report.overall) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f\n", name.c_str(), agg.mean, agg.stddev);
        out += buf;
    }
    return out;
}

}  // namespace fcad
