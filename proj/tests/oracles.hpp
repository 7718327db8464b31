#pragma once

// Test-only reference implementations. Everything here is written as plain
// nested loops in double precision, independent of the library code paths it
// checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <queue>
#include <set>
#include <vector>

#include "fcad/tensor.hpp"

namespace oracle {

// --- loss references ------------------------------------------------------

// Regional cosine loss: sum over stages of mean over (n,h,w) of
// 1 - dot/(|u||v|). No epsilon.
inline double regional_loss(const std::vector<fcad::TensorD>& e,
                            const std::vector<fcad::TensorD>& d) {
    double total = 0;
    for (size_t k = 0; k < e.size(); ++k) {
        const auto& a = e[k];
        const auto& b = d[k];
        const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
        double acc = 0;
        for (int i = 0; i < n; ++i)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double dot = 0, nu = 0, nv = 0;
                    for (int ch = 0; ch < c; ++ch) {
                        dot += a.at(i, ch, y, x) * b.at(i, ch, y, x);
                        nu += a.at(i, ch, y, x) * a.at(i, ch, y, x);
                        nv += b.at(i, ch, y, x) * b.at(i, ch, y, x);
                    }
                    acc += 1.0 - dot / (std::sqrt(nu) * std::sqrt(nv));
                }
        total += acc / (static_cast<double>(n) * h * w);
    }
    return total;
}

// Global cosine loss: flatten each sample's (C,H,W) block, cosine, batch mean,
// sum over stages.
inline double global_loss(const std::vector<fcad::TensorD>& e,
                          const std::vector<fcad::TensorD>& d) {
    double total = 0;
    for (size_t k = 0; k < e.size(); ++k) {
        const auto& a = e[k];
        const auto& b = d[k];
        const int n = a.dim(0);
        const size_t len = a.numel() / static_cast<size_t>(n);
        double acc = 0;
        for (int i = 0; i < n; ++i) {
            double dot = 0, nu = 0, nv = 0;
            for (size_t j = 0; j < len; ++j) {
                const double u = a.v[i * len + j], v = b.v[i * len + j];
                dot += u * v;
                nu += u * u;
                nv += v * v;
            }
            acc += 1.0 - dot / (std::sqrt(nu) * std::sqrt(nv));
        }
        total += acc / n;
    }
    return total;
}

// --- finite differences ----------------------------------------------------

// Central finite-difference gradient of `f` w.r.t. every entry of `x`.
template <typename F>
fcad::TensorD fd_gradient(F&& f, fcad::TensorD& x, double step = 1e-4) {
    fcad::TensorD g(x.shape);
    for (size_t i = 0; i < x.numel(); ++i) {
        const double keep = x.v[i];
        x.v[i] = keep + step;
        const double hi = f();
        x.v[i] = keep - step;
        const double lo = f();
        x.v[i] = keep;
        g.v[i] = (hi - lo) / (2 * step);
    }
    return g;
}

// --- bilinear upsample reference -------------------------------------------

// align_corners=false convention: source coordinate = (dst + 0.5) * scale - 0.5,
// clamped to the valid range.
inline fcad::TensorD upsample_bilinear(const fcad::TensorD& src, int oh, int ow) {
    const int ih = src.dim(0), iw = src.dim(1);
    fcad::TensorD out({oh, ow});
    const double sy = static_cast<double>(ih) / oh;
    const double sx = static_cast<double>(iw) / ow;
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double fy = (y + 0.5) * sy - 0.5;
            double fx = (x + 0.5) * sx - 0.5;
            fy = std::max(0.0, std::min(fy, ih - 1.0));
            fx = std::max(0.0, std::min(fx, iw - 1.0));
            const int y0 = static_cast<int>(std::floor(fy));
            const int x0 = static_cast<int>(std::floor(fx));
            const int y1 = std::min(y0 + 1, ih - 1);
            const int x1 = std::min(x0 + 1, iw - 1);
            const double wy = fy - y0, wx = fx - x0;
            out.v[y * ow + x] = (1 - wy) * ((1 - wx) * src.v[y0 * iw + x0] +
                                            wx * src.v[y0 * iw + x1]) +
                                wy * ((1 - wx) * src.v[y1 * iw + x0] +
                                      wx * src.v[y1 * iw + x1]);
        }
    return out;
}

// --- metric references -------------------------------------------------------

// AUROC by brute-force pairwise comparison with half credit for ties.
inline double pairwise_auroc(const std::vector<double>& scores,
                             const std::vector<int>& labels) {
    double wins = 0;
    size_t pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j])
                wins += 1;
            else if (scores[i] == scores[j])
                wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

// Optimal-F1 search across every cut between sorted distinct scores plus the
// all-positive and all-negative extremes. Ties broken by ACC, then lower
// threshold.
struct F1Point {
    double f1 = -1, acc = 0, threshold = 0;
};

inline F1Point exhaustive_best_f1(const std::vector<double>& scores,
                                  const std::vector<int>& labels) {
    std::vector<double> uniq(scores);
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    std::vector<double> cands;
    cands.push_back(uniq.front() - 1.0);
    for (size_t i = 0; i + 1 < uniq.size(); ++i) cands.push_back((uniq[i] + uniq[i + 1]) / 2);
    cands.push_back(uniq.back() + 1.0);
    F1Point best;
    for (double t : cands) {
        int tp = 0, fp = 0, fn = 0, tn = 0;
        for (size_t i = 0; i < scores.size(); ++i) {
            const bool pred = scores[i] >= t;
            if (pred && labels[i] == 1) ++tp;
            if (pred && labels[i] == 0) ++fp;
            if (!pred && labels[i] == 1) ++fn;
            if (!pred && labels[i] == 0) ++tn;
        }
        const double denom = 2.0 * tp + fp + fn;
        const double f1 = denom > 0 ? 2.0 * tp / denom : 0.0;
        const double acc = static_cast<double>(tp + tn) / scores.size();
        if (f1 > best.f1 + 1e-15 ||
            (std::abs(f1 - best.f1) <= 1e-15 &&
             (acc > best.acc + 1e-15 ||
              (std::abs(acc - best.acc) <= 1e-15 && t < best.threshold)))) {
            best = {f1, acc, t};
        }
    }
    return best;
}

// 8-connected components by BFS flood fill.
inline std::vector<int> flood_fill_components(const std::vector<uint8_t>& mask, int h, int w,
                                              int* n_components = nullptr) {
    std::vector<int> label(static_cast<size_t>(h) * w, -1);
    int next = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!mask[y * w + x] || label[y * w + x] >= 0) continue;
            std::queue<std::pair<int, int>> q;
            q.push({y, x});
            label[y * w + x] = next;
            while (!q.empty()) {
                auto [cy, cx] = q.front();
                q.pop();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = cy + dy, nx = cx + dx;
                        if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
                        if (!mask[ny * w + nx] || label[ny * w + nx] >= 0) continue;
                        label[ny * w + nx] = next;
                        q.push({ny, nx});
                    }
            }
            ++next;
        }
    if (n_components) *n_components = next;
    return label;
}

// AUPRO by evaluating PRO and FPR at every distinct score (threshold = value,
// prediction = score >= t), then trapezoid integration over FPR in
// [0, fpr_limit] with linear interpolation at the limit.
inline double brute_aupro(const std::vector<std::vector<double>>& maps,
                          const std::vector<std::vector<uint8_t>>& masks,
                          const std::vector<std::pair<int, int>>& shapes,
                          double fpr_limit = 0.3) {
    struct Region {
        size_t image;
        std::set<int> pixels;
    };
    std::vector<Region> regions;
    size_t total_neg = 0;
    for (size_t i = 0; i < masks.size(); ++i) {
        int nc = 0;
        auto lab = flood_fill_components(masks[i], shapes[i].first, shapes[i].second, &nc);
        std::map<int, Region> by_label;
        for (size_t p = 0; p < lab.size(); ++p) {
            if (lab[p] >= 0) {
                by_label[lab[p]].image = i;
                by_label[lab[p]].pixels.insert(static_cast<int>(p));
            } else {
                ++total_neg;
            }
        }
        for (auto& [_, r] : by_label) regions.push_back(r);
    }
    std::vector<double> thresholds;
    for (const auto& m : maps) thresholds.insert(thresholds.end(), m.begin(), m.end());
    std::sort(thresholds.begin(), thresholds.end(), std::greater<double>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    std::vector<std::pair<double, double>> curve;  // (fpr, pro)
    curve.push_back({0.0, 0.0});
    for (double t : thresholds) {
        double pro = 0;
        for (const auto& r : regions) {
            size_t hit = 0;
            for (int p : r.pixels)
                if (maps[r.image][p] >= t) ++hit;
            pro += static_cast<double>(hit) / r.pixels.size();
        }
        pro /= regions.size();
        size_t fp = 0;
        for (size_t i = 0; i < maps.size(); ++i)
            for (size_t p = 0; p < maps[i].size(); ++p)
                if (!masks[i][p] && maps[i][p] >= t) ++fp;
        curve.push_back({static_cast<double>(fp) / total_neg, pro});
    }
    if (curve.back().first < 1.0) curve.push_back({1.0, curve.back().second});

    double area = 0;
    for (size_t i = 1; i < curve.size(); ++i) {
        double x0 = curve[i - 1].first, y0 = curve[i - 1].second;
        double x1 = curve[i].first, y1 = curve[i].second;
        if (x0 >= fpr_limit) break;
        if (x1 > fpr_limit) {
            const double w = (fpr_limit - x0) / (x1 - x0);
            x1 = fpr_limit;
            y1 = y0 + w * (y1 - y0);
        }
        area += (x1 - x0) * (y0 + y1) / 2;
    }
    return area / fpr_limit;
}

}  // namespace oracle
