#include "fcad/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "json.hpp"

namespace fcad {

ScoreReduction parse_reduction(const std::string& name) {
    if (name == "max" || name == "MAX") return ScoreReduction::kMax;
    if (name == "mean" || name == "MEAN") return ScoreReduction::kMean;
    throw ConfigError("unknown score reduction '" + name + "'; expected max or mean");
}

std::string reduction_name(ScoreReduction r) {
    return r == ScoreReduction::kMax ? "max" : "mean";
}

Tensor upsample_bilinear(const Tensor& maps, int out_h, int out_w) {
    check_shape(maps.rank() == 3, "upsample_bilinear: expected (N, H, W), got " +
                                      maps.shape_str());
    check_shape(out_h >= 1 && out_w >= 1, "upsample_bilinear: output size must be positive");
    const int n = maps.dim(0), h = maps.dim(1), w = maps.dim(2);
    Tensor out({n, out_h, out_w});
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int i = 0; i < n; ++i) {
        const float* src = maps.data() + static_cast<size_t>(i) * h * w;
        float* dst = out.data() + static_cast<size_t>(i) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
            const double fy = std::max((oy + 0.5) * sy - 0.5, 0.0);
            const int y0 = std::min(static_cast<int>(fy), h - 1);
            const int y1 = std::min(y0 + 1, h - 1);
            const double wy = fy - y0;
            for (int ox = 0; ox < out_w; ++ox) {
                const double fx = std::max((ox + 0.5) * sx - 0.5, 0.0);
                const int x0 = std::min(static_cast<int>(fx), w - 1);
                const int x1 = std::min(x0 + 1, w - 1);
                const double wx = fx - x0;
                const double top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
                const double bot = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
                dst[oy * out_w + ox] = static_cast<float>(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    return out;
}

Tensor gaussian_smooth(const Tensor& maps, double sigma) {
    check_shape(maps.rank() == 3, "gaussian_smooth: expected (N, H, W), got " + maps.shape_str());
    check_config(sigma > 0.0, "gaussian_smooth: sigma must be positive");
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        ksum += kernel[static_cast<size_t>(i + radius)];
    }
    for (double& k : kernel) k /= ksum;

    const int n = maps.dim(0), h = maps.dim(1), w = maps.dim(2);
    auto reflect = [](int i, int size) {
        // reflect-101 indexing: -1 -> 1, size -> size - 2
        while (i < 0 || i >= size) {
            if (i < 0) i = -i;
            if (i >= size) i = 2 * size - 2 - i;
            if (size == 1) return 0;
        }
        return i;
    };
    Tensor tmp(maps.shape), out(maps.shape);
    for (int img = 0; img < n; ++img) {
        const float* src = maps.data() + static_cast<size_t>(img) * h * w;
        float* mid = tmp.data() + static_cast<size_t>(img) * h * w;
        float* dst = out.data() + static_cast<size_t>(img) * h * w;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k)
                    acc += kernel[static_cast<size_t>(k + radius)] * src[y * w + reflect(x + k, w)];
                mid[y * w + x] = static_cast<float>(acc);
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k)
                    acc += kernel[static_cast<size_t>(k + radius)] * mid[reflect(y + k, h) * w + x];
                dst[y * w + x] = static_cast<float>(acc);
            }
    }
    return out;
}

Tensor assemble_score_map(const std::vector<Tensor>& maps, int out_h, int out_w,
                          std::optional<double> smoothing_sigma) {
    check_shape(!maps.empty(), "assemble_score_map: no distance maps given");
    const int n = maps[0].dim(0);
    TensorD acc({n, out_h, out_w});
    for (const Tensor& m : maps) {
        check_shape(m.rank() == 3 && m.dim(0) == n,
                    "assemble_score_map: inconsistent map batch " + m.shape_str());
        check_shape(out_h % m.dim(1) == 0 && out_w % m.dim(2) == 0,
                    "assemble_score_map: image size (" + std::to_string(out_h) + "," +
                        std::to_string(out_w) + ") not divisible by map size " + m.shape_str());
        const Tensor up = upsample_bilinear(m, out_h, out_w);
        for (size_t i = 0; i < acc.numel(); ++i) acc.v[i] += up.v[i];
    }
    Tensor out = acc.cast<float>();
    if (smoothing_sigma) out = gaussian_smooth(out, *smoothing_sigma);
    return out;
}

std::vector<Tensor> pair_distance_maps(const PairSet& pairs) {
    std::vector<Tensor> maps;
    maps.reserve(static_cast<size_t>(pairs.n_pairs()));
    for (int i = 0; i < pairs.n_pairs(); ++i)
        maps.push_back(distance_map(pairs.target(i), pairs.recon(i)));
    return maps;
}

Tensor assemble_score_map(const PairSet& pairs, int out_h, int out_w,
                          std::optional<double> smoothing_sigma) {
    return assemble_score_map(pair_distance_maps(pairs), out_h, out_w, smoothing_sigma);
}

namespace {

std::pair<double, double> reduce(const float* p, size_t count) {
    double mx = -std::numeric_limits<double>::infinity(), sum = 0.0;
    for (size_t i = 0; i < count; ++i) {
        mx = std::max(mx, static_cast<double>(p[i]));
        sum += p[i];
    }
    return {mx, sum / static_cast<double>(count)};
}

}  // namespace

float image_score(const Tensor& map2d, ScoreReduction r) {
    check_shape(map2d.rank() == 2 && map2d.numel() > 0,
                "image_score: expected a non-empty (H, W) map, got " + map2d.shape_str());
    auto [mx, mean] = reduce(map2d.data(), map2d.numel());
    return static_cast<float>(r == ScoreReduction::kMax ? mx : mean);
}

std::vector<float> image_scores(const Tensor& maps, ScoreReduction r) {
    check_shape(maps.rank() == 3 && maps.numel() > 0,
                "image_scores: expected a non-empty (N, H, W) batch, got " + maps.shape_str());
    const size_t plane = static_cast<size_t>(maps.dim(1)) * maps.dim(2);
    std::vector<float> out;
    out.reserve(static_cast<size_t>(maps.dim(0)));
    for (int i = 0; i < maps.dim(0); ++i) {
        auto [mx, mean] = reduce(maps.data() + static_cast<size_t>(i) * plane, plane);
        out.push_back(static_cast<float>(r == ScoreReduction::kMax ? mx : mean));
    }
    return out;
}

AnomalyResult make_result(const Tensor& map2d, ScoreReduction r) {
    AnomalyResult res;
    res.score_map = map2d;
    res.reduction = r;
    res.score = image_score(map2d, r);
    return res;
}

void export_score_map(const std::string& path_base, const Tensor& map2d,
                      const std::string& image_id) {
    check_shape(map2d.rank() == 2, "export_score_map: expected (H, W), got " + map2d.shape_str());
    {
        std::ofstream f(path_base + ".raw", std::ios::binary);
        if (!f) throw IoError("export_score_map: cannot write " + path_base + ".raw");
        f.write(reinterpret_cast<const char*>(map2d.data()),
                static_cast<std::streamsize>(map2d.numel() * sizeof(float)));
    }
    nlohmann::json meta = {
        {"shape", {map2d.dim(0), map2d.dim(1)}},
        {"dtype", "float32"},
        {"byte_order", "little"},
        {"image_id", image_id},
    };
    std::ofstream f(path_base + ".json");
    if (!f) throw IoError("export_score_map: cannot write " + path_base + ".json");
    f << meta.dump(2) << "\n";
}

Tensor read_score_map(const std::string& path_base) {
    std::ifstream jf(path_base + ".json");
    if (!jf) throw IoError("read_score_map: cannot read " + path_base + ".json");
    nlohmann::json meta = nlohmann::json::parse(jf);
    const int h = meta.at("shape").at(0).get<int>();
    const int w = meta.at("shape").at(1).get<int>();
    Tensor out({h, w});
    std::ifstream rf(path_base + ".raw", std::ios::binary);
    if (!rf) throw IoError("read_score_map: cannot read " + path_base + ".raw");
    rf.read(reinterpret_cast<char*>(out.data()),
            static_cast<std::streamsize>(out.numel() * sizeof(float)));
    if (rf.gcount() != static_cast<std::streamsize>(out.numel() * sizeof(float)))
        throw IoError("read_score_map: " + path_base + ".raw is truncated");
    return out;
}

void write_heatmap_png(const std::string& path, const Tensor& map2d) {
    check_shape(map2d.rank() == 2, "write_heatmap_png: expected (H, W), got " +
                                       map2d.shape_str());
    const int h = map2d.dim(0), w = map2d.dim(1);
    float lo = map2d.v[0], hi = map2d.v[0];
    for (float v : map2d.v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const float span = hi - lo;
    cv::Mat gray(h, w, CV_8UC1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float v = map2d.v[static_cast<size_t>(y) * w + x];
            const float t = span > 0.0f ? (v - lo) / span : 0.0f;
            gray.at<uint8_t>(y, x) = static_cast<uint8_t>(std::lround(255.0f * t));
        }
    cv::Mat color;
    cv::applyColorMap(gray, color, cv::COLORMAP_JET);
    if (!cv::imwrite(path, color))
        throw IoError("write_heatmap_png: cannot write " + path);
}

}  // namespace fcad
