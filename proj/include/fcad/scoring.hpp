#pragma once

// Turns per-stage distance maps into image-resolution anomaly evidence:
// bilinear upsampling of each stage map to the input size, summation over
// pairs, optional Gaussian smoothing, and the scalar image score (max or
// mean reduction). Also houses the raw/heatmap exports used by the CLI.

#include <optional>
#include <string>
#include <vector>

#include "fcad/graph.hpp"
#include "fcad/tensor.hpp"

namespace fcad {

enum class ScoreReduction { kMax, kMean };

ScoreReduction parse_reduction(const std::string& name);
std::string reduction_name(ScoreReduction r);

// Bilinear interpolation of each (H, W) plane of a batched (N, H, W) map to
// (N, out_h, out_w), sampling at pixel centers (no corner alignment).
Tensor upsample_bilinear(const Tensor& maps, int out_h, int out_w);

// Separable Gaussian blur of each plane with reflect padding; the kernel is
// normalized so constants pass through unchanged. sigma <= 0 is an error.
Tensor gaussian_smooth(const Tensor& maps, double sigma);

// Upsamples every per-pair map to (out_h, out_w), sums them (double
// accumulation, so pair order cannot perturb the result), then smooths when
// requested. maps[k] is (N, Hk, Wk); the result is (N, out_h, out_w).
Tensor assemble_score_map(const std::vector<Tensor>& maps, int out_h, int out_w,
                          std::optional<double> smoothing_sigma = std::nullopt);

// Convenience: distance maps of every pair in the set, pair-id order.
std::vector<Tensor> pair_distance_maps(const PairSet& pairs);
Tensor assemble_score_map(const PairSet& pairs, int out_h, int out_w,
                          std::optional<double> smoothing_sigma = std::nullopt);

// Scalar score of one (H, W) map or of each plane of a batched (N, H, W) map.
float image_score(const Tensor& map2d, ScoreReduction r);
std::vector<float> image_scores(const Tensor& maps, ScoreReduction r);

struct AnomalyResult {
    Tensor score_map;  // (H, W)
    float score = 0.0f;
    ScoreReduction reduction = ScoreReduction::kMax;
};

AnomalyResult make_result(const Tensor& map2d, ScoreReduction r);

// Writes <path_base>.raw (32-bit little-endian floats, row-major) and
// <path_base>.json ({"shape": [H, W], "dtype": "float32", "image_id": ...}).
void export_score_map(const std::string& path_base, const Tensor& map2d,
                      const std::string& image_id);

// Reads an exported map back (used by tests and tooling).
Tensor read_score_map(const std::string& path_base);

// 8-bit color heatmap of one (H, W) map, min-max normalized per image; a
// constant map renders as all-minimum color.
void write_heatmap_png(const std::string& path, const Tensor& map2d);

}  // namespace fcad
