#pragma once

// Evaluation protocol: image-level AUROC, pooled pixel-level AUROC, AUPRO
// (per-region overlap integrated over a false-positive-rate budget), and
// F1/accuracy at the optimal-F1 threshold, plus JSON/CSV report export.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fcad/tensor.hpp"

namespace fcad {

// Rank-statistic AUROC with half credit for ties:
// P(s_pos > s_neg) + 0.5 * P(s_pos == s_neg). Throws MetricError unless both
// classes are present.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// AUROC over the pooled pixel population of all test images. Maps are (H, W)
// score tensors; masks are (H, W) tensors binarized at 0.5.
double pixel_auroc(const std::vector<Tensor>& score_maps, const std::vector<Tensor>& gt_masks);

// 8-connected component labeling of a binary mask. Returns per-pixel labels
// (-1 for background, components numbered from 0) and the component count.
std::vector<int> connected_components(const std::vector<uint8_t>& mask, int h, int w,
                                      int* n_components);

// Area under the per-region-overlap curve: sweep score thresholds (all unique
// values when there are at most max_thresholds of them, else that many
// rank-spaced ones), average per-component overlap against false positive
// rate, and integrate by trapezoid over FPR in [0, fpr_limit], normalized by
// fpr_limit. Requires at least one anomalous region and one normal pixel.
double aupro(const std::vector<Tensor>& score_maps, const std::vector<Tensor>& gt_masks,
             double fpr_limit = 0.3, int max_thresholds = 5000);

struct F1Result {
    double f1 = 0.0;
    double acc = 0.0;
    double threshold = 0.0;
};

// Best F1 of the positive class over all cut-points (midpoints of adjacent
// distinct scores plus sentinels beyond both extremes); predictions are
// score >= threshold. F1 ties break toward higher accuracy, then lower
// threshold.
F1Result f1_acc_at_optimal_f1(const std::vector<double>& scores,
                              const std::vector<int>& labels);

// One row of metric values; pixel metrics stay empty when no masks exist.
struct MetricSet {
    double i_auroc = 0.0;
    std::optional<double> p_auroc;
    std::optional<double> aupro;
    std::optional<double> f1;
    std::optional<double> acc;
    double threshold_f1 = 0.0;
    int n_images = 0;
};

struct EvalReport {
    MetricSet overall;
    // Populated when more than one category is present; a category needs both
    // image classes to be scoreable and is omitted otherwise.
    std::map<std::string, MetricSet> per_category;
};

// Computes the full report. categories may be empty (treated as one
// category); score_maps/gt_masks may be empty to skip pixel metrics, and
// must otherwise align with scores by index.
EvalReport compute_eval_report(const std::vector<double>& scores,
                               const std::vector<int>& labels,
                               const std::vector<std::string>& categories,
                               const std::vector<Tensor>& score_maps,
                               const std::vector<Tensor>& gt_masks);

std::string report_to_json(const EvalReport& report);
// Stable schema: category,n_images,i_auroc,p_auroc,aupro,f1,acc,threshold_f1
// with 6-decimal fixed formatting and empty cells for absent metrics.
std::string report_to_csv(const EvalReport& report);

}  // namespace fcad
