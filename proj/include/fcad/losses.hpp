#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "fcad/tensor.hpp"

namespace fcad {

/// Stage tensors are (N, C, H, W); a pyramid is one tensor per stage. Losses
/// treat every entry of the vector as an independent target/reconstruction
/// pair, so a paired-encoder step can pass 6 stages instead of 3.
template <typename T>
using PyramidT = std::vector<TensorT<T>>;

using Pyramid = PyramidT<float>;

constexpr double kCosineEps = 1e-8;  // added to each norm denominator

struct HardMiningConfig {
    double alpha = 1.0;
    double alpha_start = -3.0;
    double alpha_end = 1.0;
    double warmup_fraction = 0.1;
};

/// Piecewise-linear alpha ramp: alpha_start -> alpha_end over the first
/// warmup_fraction of iterations, then constant at alpha_end.
inline double alpha_schedule(int iteration, int total_iterations, const HardMiningConfig& cfg) {
    check_config(total_iterations > 0, "alpha_schedule: total_iterations must be positive");
    check_config(cfg.warmup_fraction > 0.0 && cfg.warmup_fraction <= 1.0,
                 "alpha_schedule: warmup_fraction must lie in (0, 1]");
    if (iteration < 0 || iteration >= total_iterations)
        throw ConfigError("alpha_schedule: iteration out of range [0, total_iterations)");
    const double warmup = cfg.warmup_fraction * total_iterations;
    if (static_cast<double>(iteration) >= warmup) return cfg.alpha_end;
    return cfg.alpha_start + (cfg.alpha_end - cfg.alpha_start) * (iteration / warmup);
}

namespace detail {

template <typename T>
void check_pair(const TensorT<T>& fe, const TensorT<T>& fd, const char* who) {
    check_shape(fe.shape.size() == 4 && fd.shape.size() == 4,
                std::string(who) + ": stage tensors must be rank-4 (N,C,H,W)");
    check_shape(fe.shape == fd.shape, std::string(who) + ": shape mismatch " + fe.shape_str() +
                                          " vs " + fd.shape_str());
    check_shape(fe.dim(1) >= 1, std::string(who) + ": channel dimension must be >= 1");
}

}  // namespace detail

/// Per-position cosine distance between two stage tensors (Eq.-1 style map).
/// Input (N,C,H,W) pair, output (N,H,W) with values in [0, 2].
template <typename T>
TensorT<T> distance_map(const TensorT<T>& fe, const TensorT<T>& fd) {
    detail::check_pair(fe, fd, "distance_map");
    const int n = fe.dim(0), c = fe.dim(1), h = fe.dim(2), w = fe.dim(3);
    const size_t plane = static_cast<size_t>(h) * w;
    TensorT<T> m({n, h, w});
    for (int i = 0; i < n; ++i) {
        const T* pe = fe.data() + static_cast<size_t>(i) * c * plane;
        const T* pd = fd.data() + static_cast<size_t>(i) * c * plane;
        T* pm = m.data() + static_cast<size_t>(i) * plane;
        for (size_t p = 0; p < plane; ++p) {
            double dot = 0, ne = 0, nd = 0;
            for (int ch = 0; ch < c; ++ch) {
                const double a = pe[ch * plane + p];
                const double b = pd[ch * plane + p];
                dot += a * b;
                ne += a * a;
                nd += b * b;
            }
            const double denom = (std::sqrt(ne) + kCosineEps) * (std::sqrt(nd) + kCosineEps);
            pm[p] = static_cast<T>(1.0 - dot / denom);
        }
    }
    return m;
}

template <typename T>
struct LossResult {
    T value = T(0);
    PyramidT<T> grad_target;  // d value / d target stages; empty unless requested
    PyramidT<T> grad_recon;   // d value / d reconstruction stages
};

namespace detail {

// Gradient of (1 - cos(u, v)) w.r.t. u and v for one vector pair, scaled by `scale`
// and accumulated into gu/gv (either may be null). Layout is strided so the same
// routine serves per-point (stride = plane) and flattened (stride = 1) cosines.
template <typename T>
void accum_cosine_grad(const T* u, const T* v, size_t len, size_t stride, double scale,
                       T* gu, T* gv) {
    double dot = 0, nu2 = 0, nv2 = 0;
    for (size_t i = 0; i < len; ++i) {
        const double a = u[i * stride], b = v[i * stride];
        dot += a * b;
        nu2 += a * a;
        nv2 += b * b;
    }
    const double nu = std::sqrt(nu2), nv = std::sqrt(nv2);
    const double denom = (nu + kCosineEps) * (nv + kCosineEps);
    const double cosv = dot / denom;
    const double inv_nu = nu > 0 ? 1.0 / nu : 0.0;
    const double inv_nv = nv > 0 ? 1.0 / nv : 0.0;
    // d(1-cos)/du = -v/denom + cos * u / (nu*(nu+eps)); symmetric in v.
    const double cu = cosv * inv_nu / (nu + kCosineEps);
    const double cv = cosv * inv_nv / (nv + kCosineEps);
    for (size_t i = 0; i < len; ++i) {
        const double a = u[i * stride], b = v[i * stride];
        if (gu) gu[i * stride] += static_cast<T>(scale * (-b / denom + cu * a));
        if (gv) gv[i * stride] += static_cast<T>(scale * (-a / denom + cv * b));
    }
}

template <typename T>
double cosine_distance(const T* u, const T* v, size_t len, size_t stride) {
    double dot = 0, nu2 = 0, nv2 = 0;
    for (size_t i = 0; i < len; ++i) {
        const double a = u[i * stride], b = v[i * stride];
        dot += a * b;
        nu2 += a * a;
        nv2 += b * b;
    }
    const double denom = (std::sqrt(nu2) + kCosineEps) * (std::sqrt(nv2) + kCosineEps);
    return 1.0 - dot / denom;
}

}  // namespace detail

/// Regional cosine-distance loss: sum over stages of the (batch and) spatial
/// mean of the per-point distance map. Gradients flow to both sides.
template <typename T>
LossResult<T> loss_regional(const PyramidT<T>& target, const PyramidT<T>& recon,
                            bool want_grads = false) {
    check_shape(target.size() == recon.size() && !target.empty(),
                "loss_regional: pyramids must be non-empty and of equal length");
    LossResult<T> out;
    double total = 0;
    if (want_grads) {
        out.grad_target.reserve(target.size());
        out.grad_recon.reserve(target.size());
    }
    for (size_t k = 0; k < target.size(); ++k) {
        const TensorT<T>& fe = target[k];
        const TensorT<T>& fd = recon[k];
        detail::check_pair(fe, fd, "loss_regional");
        const int n = fe.dim(0), c = fe.dim(1), h = fe.dim(2), w = fe.dim(3);
        const size_t plane = static_cast<size_t>(h) * w;
        const double scale = 1.0 / (static_cast<double>(n) * plane);
        TensorT<T> ge, gd;
        if (want_grads) {
            ge = TensorT<T>(fe.shape);
            gd = TensorT<T>(fd.shape);
        }
        for (int i = 0; i < n; ++i) {
            const size_t base = static_cast<size_t>(i) * c * plane;
            for (size_t p = 0; p < plane; ++p) {
                total += scale * detail::cosine_distance(fe.data() + base + p,
                                                         fd.data() + base + p, c, plane);
                if (want_grads)
                    detail::accum_cosine_grad(fe.data() + base + p, fd.data() + base + p, c,
                                              plane, scale, ge.data() + base + p,
                                              gd.data() + base + p);
            }
        }
        if (want_grads) {
            out.grad_target.push_back(std::move(ge));
            out.grad_recon.push_back(std::move(gd));
        }
    }
    out.value = static_cast<T>(total);
    return out;
}

/// Global cosine-distance loss: per sample, the whole stage map is flattened to
/// one C*H*W vector before the cosine. stop_grad_target severs the target path,
/// in which case grad_target comes back as exact zeros.
template <typename T>
LossResult<T> loss_global(const PyramidT<T>& target, const PyramidT<T>& recon,
                          bool stop_grad_target, bool want_grads = false) {
    check_shape(target.size() == recon.size() && !target.empty(),
                "loss_global: pyramids must be non-empty and of equal length");
    LossResult<T> out;
    double total = 0;
    for (size_t k = 0; k < target.size(); ++k) {
        const TensorT<T>& fe = target[k];
        const TensorT<T>& fd = recon[k];
        detail::check_pair(fe, fd, "loss_global");
        const int n = fe.dim(0);
        const size_t len = fe.numel() / static_cast<size_t>(n);
        const double scale = 1.0 / n;
        TensorT<T> ge, gd;
        if (want_grads) {
            ge = TensorT<T>(fe.shape);
            gd = TensorT<T>(fd.shape);
        }
        for (int i = 0; i < n; ++i) {
            const size_t base = static_cast<size_t>(i) * len;
            total += scale * detail::cosine_distance(fe.data() + base, fd.data() + base, len,
                                                     size_t(1));
            if (want_grads)
                detail::accum_cosine_grad(fe.data() + base, fd.data() + base, len, size_t(1),
                                          scale,
                                          stop_grad_target ? nullptr : ge.data() + base,
                                          gd.data() + base);
        }
        if (want_grads) {
            out.grad_target.push_back(std::move(ge));
            out.grad_recon.push_back(std::move(gd));
        }
    }
    out.value = static_cast<T>(total);
    return out;
}

/// Mask of "easy" positions for hard-normal mining: entries of a distance map
/// strictly below mu + alpha*sigma, with mu/sigma taken over every entry
/// (population sigma). Works on any tensor shape.
struct MiningMask {
    std::vector<uint8_t> easy;  // 1 where the position is stop-gradded
    double mu = 0;
    double sigma = 0;
    size_t discarded = 0;
};

template <typename T>
MiningMask hard_mining_mask(const TensorT<T>& m, double alpha) {
    check_shape(m.numel() >= 2, "hard_mining_mask: need at least 2 positions for sigma");
    MiningMask out;
    double mu = 0;
    for (T x : m.v) mu += x;
    mu /= static_cast<double>(m.numel());
    double var = 0;
    for (T x : m.v) {
        const double d = x - mu;
        var += d * d;
    }
    var /= static_cast<double>(m.numel());
    out.mu = mu;
    out.sigma = std::sqrt(var);
    const double thresh = out.mu + alpha * out.sigma;
    out.easy.resize(m.numel());
    for (size_t i = 0; i < m.numel(); ++i) {
        out.easy[i] = static_cast<double>(m.v[i]) < thresh ? 1 : 0;
        out.discarded += out.easy[i];
    }
    return out;
}

/// Hard-mined global cosine loss: the value is identical to loss_global; the
/// reconstruction gradient is zeroed (all channels) at easy positions, with
/// per-stage statistics taken over the whole mini-batch. The target side is
/// never mined; stop_grad_target controls it exactly as in loss_global.
template <typename T>
LossResult<T> loss_global_hm(const PyramidT<T>& target, const PyramidT<T>& recon, T alpha,
                             bool stop_grad_target, bool want_grads = false) {
    LossResult<T> out = loss_global(target, recon, stop_grad_target, want_grads);
    if (!want_grads) return out;
    for (size_t k = 0; k < target.size(); ++k) {
        TensorT<T> m = distance_map(target[k], recon[k]);
        const MiningMask mask = hard_mining_mask(m, static_cast<double>(alpha));
        TensorT<T>& gd = out.grad_recon[k];
        const int n = gd.dim(0), c = gd.dim(1);
        const size_t plane = static_cast<size_t>(gd.dim(2)) * gd.dim(3);
        for (int i = 0; i < n; ++i)
            for (size_t p = 0; p < plane; ++p)
                if (mask.easy[static_cast<size_t>(i) * plane + p])
                    for (int ch = 0; ch < c; ++ch)
                        gd.v[(static_cast<size_t>(i) * c + ch) * plane + p] = T(0);
    }
    return out;
}

}  // namespace fcad
