#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "fcad/common.hpp"
#include "fcad/scoring.hpp"
#include "fcad/tensor.hpp"

namespace fcad {

/// Directory conventions this loader understands.
enum class DatasetLayout {
    kMvtec,         ///< <category>/{train/good, test/<kind>, ground_truth/<kind>}
    kVisa,          ///< split-file driven: csv rows name images and masks per category
    kFolderBinary,  ///< train/normal, test/normal, test/anomalous — no masks
    kSynthetic,     ///< generated set; same tree as kMvtec under category "synthetic"
};

DatasetLayout parse_layout(const std::string& name);
const char* layout_name(DatasetLayout layout);

enum class Split { kTrain, kTest };

/// Per-channel affine applied after scaling pixels to [0,1].
struct Normalization {
    std::array<float, 3> mean = {0.485f, 0.456f, 0.406f};
    std::array<float, 3> std = {0.229f, 0.224f, 0.225f};
};

struct DatasetSpec {
    DatasetLayout layout = DatasetLayout::kMvtec;
    std::string root;
    std::string category;  ///< required for kMvtec / kVisa; "synthetic" for generated sets
    int image_size = 256;
    std::optional<int> center_crop;
    Normalization normalization;
    ScoreReduction score_reduction = ScoreReduction::kMax;
    std::string split_file;  ///< kVisa only; relative to root unless absolute
};

/// One image at native resolution, pixels in [0,1], channels RGB.
struct Sample {
    Tensor image;                ///< (3, H, W)
    int label = 0;               ///< 0 normal, 1 anomalous
    std::optional<Tensor> mask;  ///< (H, W) in {0,1}; absent in mask-free layouts
    std::string category;
    std::string path;
};

/// Walk the directory tree for one split. Ordering is deterministic:
/// subdirectories and files are visited in lexicographic path order.
/// Throws DataError when the tree is missing pieces (the message lists the
/// expected paths) or when a training image is not normal.
std::vector<Sample> load_dataset(const DatasetSpec& spec, Split split);

/// Model-ready version of one sample.
struct Preprocessed {
    Tensor image;                ///< (3, S, S) normalized
    std::optional<Tensor> mask;  ///< (S, S) in {0,1}
};

/// Resize (bilinear) to spec.image_size, optionally center-crop, normalize
/// per channel. Masks are resized nearest-neighbor and re-binarized.
Preprocessed preprocess(const Sample& sample, const DatasetSpec& spec);

/// A fully preprocessed split packed into batch-ready storage.
struct PackedSplit {
    Tensor images;  ///< (N, 3, S, S)
    std::vector<int> labels;
    std::vector<Tensor> masks;  ///< per-image (S, S); empty when has_masks is false
    std::vector<std::string> categories;
    std::vector<std::string> paths;
    bool has_masks = false;
    int n() const { return images.rank() == 4 ? images.dim(0) : 0; }
};

PackedSplit load_packed(const DatasetSpec& spec, Split split);

/// Reads one image file into an unlabeled sample (RGB, (3, H, W), values in
/// [0, 1]). Throws DataError when the file is missing or cannot be decoded.
Sample load_image_file(const std::string& path);

/// Limits on the fraction of pixels a generated defect may cover.
inline constexpr double kDefectAreaLo = 0.005;
inline constexpr double kDefectAreaHi = 0.05;

/// Materializes a procedural texture dataset under `root`: band-limited noise
/// over a periodic color pattern for normals; anomalous test images carry one
/// localized defect (contrast blob, scratch, or displaced patch) with an
/// exact ground-truth mask. Byte-identical for equal arguments.
DatasetSpec make_synthetic_dataset(uint64_t seed, int n_train, int n_test_normal,
                                   int n_test_anom, int image_size, const std::string& root);

}  // namespace fcad
