#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fcad/backbone.hpp"
#include "fcad/data.hpp"
#include "fcad/graph.hpp"
#include "fcad/losses.hpp"
#include "fcad/metrics.hpp"
#include "fcad/scoring.hpp"

namespace fcad {

/// Complete description of one experiment run.
struct RunConfig {
    ConfigVariant variant = make_variant(VariantName::kOurs);
    BackboneId backbone_id = BackboneId::kSmall18;
    DatasetSpec dataset;
    int iterations = 2000;
    int batch_size = 16;
    double lr_new = 2e-3;         ///< bottleneck + decoder
    double lr_pretrained = 1e-5;  ///< adapted encoder, when it is optimized
    double weight_decay = 1e-5;
    std::pair<double, double> betas = {0.9, 0.999};
    HardMiningConfig hard_mining;
    BnPolicy bn_policy = BnPolicy::kTrainMode;
    uint64_t seed = 0;
    int eval_every = 250;
    std::optional<double> smoothing_sigma;
};

/// Throws ConfigError on out-of-range fields.
void validate(const RunConfig& config);

/// Decoupled-weight-decay adaptive-moment optimizer over parameter groups.
class AdamW {
public:
    struct Group {
        std::vector<nn::ParamRef> params;
        double lr = 1e-3;
        double weight_decay = 0.0;
    };

    AdamW(std::vector<Group> groups, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8);

    void step();       ///< applies accumulated gradients; increments time
    void zero_grad();  ///< clears every group's gradients
    int t() const { return t_; }
    const std::vector<Group>& groups() const { return groups_; }

private:
    std::vector<Group> groups_;
    std::vector<std::vector<Tensor>> m_, v_;  // per group, per param
    double beta1_, beta2_, eps_;
    int t_ = 0;
};

/// Spread of the stage's unit-normalized feature points: per-channel
/// population standard deviation over every (batch, h, w) position, averaged
/// over channels. A constant map scores 0.
double feature_diversity(const Tensor& stage);

struct DiversityPoint {
    int iteration = 0;
    std::vector<double> per_stage;
};

struct DiversityTrace {
    std::vector<DiversityPoint> points;
};

struct TrainResult {
    std::string final_checkpoint;
    std::string best_checkpoint;  ///< empty when no periodic evaluation ran
    std::string log_path;
    double final_loss = 0.0;
    int best_iteration = -1;
    std::optional<double> best_i_auroc;
    DiversityTrace diversity;
    std::optional<EvalReport> final_report;  ///< evaluation of the final model
};

/// The training loop's non-finite-loss abort: throws Error naming the
/// iteration and the per-module parameter norms. A no-op on finite values.
void check_loss_finite(double value, int iteration, ModelGraph& graph);

/// Runs the variant's forward/loss/step loop for config.iterations steps.
/// Writes a JSON-lines log (train_log.jsonl), the final checkpoint
/// (checkpoint_final.bin) and — when a test split is reachable and
/// periodic_eval is set — the best-by-image-AUROC checkpoint
/// (checkpoint_best.bin), all under output_dir.
TrainResult train(const RunConfig& config, const std::string& output_dir,
                  bool periodic_eval = true);

/// Scores one packed split with the model as it stands; inference runs
/// entirely on running statistics. Returns per-image scalars plus score maps
/// folded into a metric report.
EvalReport evaluate(ModelGraph& graph, const PackedSplit& test, ScoreReduction reduction,
                    std::optional<double> smoothing_sigma);

/// Per-image artifacts from scoring a split, for exports and reports.
struct ScoredSplit {
    std::vector<double> scores;
    std::vector<Tensor> maps;  ///< per-image (S, S)
};
ScoredSplit score_split(ModelGraph& graph, const Tensor& images, ScoreReduction reduction,
                        std::optional<double> smoothing_sigma);

/// Rebuilds the graph a checkpoint was saved from (variant, backbone, BN
/// policy and weights all come from the file) and evaluates it on the
/// dataset's test split. Throws IoError when the checkpoint does not match
/// its declared architecture.
EvalReport evaluate_checkpoint(const std::string& checkpoint_path, const DatasetSpec& dataset,
                               std::optional<double> smoothing_sigma = std::nullopt);

/// Reconstructs a ModelGraph from a saved checkpoint.
ModelGraph graph_from_checkpoint(const std::string& checkpoint_path);

/// Writes checkpoint + sidecar describing `graph` so it can be rebuilt.
void save_graph_checkpoint(ModelGraph& graph, const std::string& path,
                           const std::string& extra_meta_json = "");

struct AggregateMetric {
    double mean = 0.0;
    double stddev = 0.0;  ///< sample standard deviation
};

struct MultiSeedReport {
    std::vector<uint64_t> seeds;
    std::map<std::string, AggregateMetric> overall;  ///< keyed by metric name
    std::vector<EvalReport> per_seed;
};

/// Trains and evaluates one run per seed (≥ 2) and aggregates the overall
/// metrics as mean ± sample std. Each run writes under
/// output_dir/seed_<seed>/.
MultiSeedReport multi_seed(const RunConfig& base, const std::vector<uint64_t>& seeds,
                           const std::string& output_dir);

std::string multi_seed_to_json(const MultiSeedReport& report);
std::string multi_seed_to_csv(const MultiSeedReport& report);

}  // namespace fcad
