#pragma once

// Minimal CPU neural-network layers with explicit forward/backward passes.
//
// Every layer is templated on the scalar type so unit tests can run the same
// code in double precision for finite-difference gradient checks.  There is
// no general autograd: each layer caches what its backward pass needs when
// forward() is called with `train = true`, and backward() must be called in
// reverse order of the forwards.  Convolutions are lowered to GEMM via
// im2col / col2im and dispatched to BLAS.
//
// None of the convolution layers carry a bias term: every convolution in the
// networks built on top of this file is followed by batch normalization,
// whose affine shift subsumes it.

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "fcad/common.hpp"
#include "fcad/tensor.hpp"

namespace fcad::nn {

// Named view of one learnable tensor and its gradient accumulator.
template <typename T>
struct ParamRefT {
    std::string name;
    TensorT<T>* value = nullptr;
    TensorT<T>* grad = nullptr;
};

// Named view of one non-learnable state tensor (e.g. BN running statistics).
template <typename T>
struct BufRefT {
    std::string name;
    TensorT<T>* value = nullptr;
};

using ParamRef = ParamRefT<float>;
using BufRef = BufRefT<float>;

// How BatchNorm2d sources its normalization statistics.
//   kBatch        : per-channel batch statistics; running stats updated.
//   kRunning      : running statistics; nothing updated (inference, or a
//                   frozen module that must ignore the current batch).
//   kBatchVarFloor: batch mean always; per-channel batch variance is used
//                   unless it falls below `var_floor`, in which case the
//                   running variance substitutes for it.  Running statistics
//                   are not updated.  This guards against the variance
//                   collapse that occurs when nearly identical feature maps
//                   share a batch.
enum class BnMode { kBatch, kRunning, kBatchVarFloor };

namespace detail {

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// Scatter one sample (C,H,W) into columns of shape (C*K*K, OH*OW), written
// at column offset `col_off` of a row-major buffer with `row_len` columns.
// Out-of-bounds taps (padding) produce zeros.
template <typename T>
void im2col(const T* src, int c, int h, int w, int k, int stride, int pad,
            int oh, int ow, T* col, long row_len, long col_off) {
    for (int ci = 0; ci < c; ++ci) {
        const T* plane = src + static_cast<long>(ci) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = col + (static_cast<long>(ci) * k * k + ky * k + kx) * row_len + col_off;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        std::memset(row + static_cast<long>(oy) * ow, 0, sizeof(T) * ow);
                        continue;
                    }
                    const T* src_row = plane + static_cast<long>(iy) * w;
                    T* dst = row + static_cast<long>(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        dst[ox] = (ix >= 0 && ix < w) ? src_row[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Inverse of im2col: accumulate columns back into one sample (C,H,W).
template <typename T>
void col2im(const T* col, int c, int h, int w, int k, int stride, int pad,
            int oh, int ow, T* dst, long row_len, long col_off) {
    for (int ci = 0; ci < c; ++ci) {
        T* plane = dst + static_cast<long>(ci) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = col + (static_cast<long>(ci) * k * k + ky * k + kx) * row_len + col_off;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    T* dst_row = plane + static_cast<long>(iy) * w;
                    const T* src = row + static_cast<long>(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst_row[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// 2-D convolution, NCHW, square kernel, no bias.
template <typename T>
struct Conv2dT {
    int in_ch = 0, out_ch = 0, kernel = 0, stride = 1, pad = 0;
    TensorT<T> weight;  // (out_ch, in_ch, kernel, kernel)
    TensorT<T> grad_weight;

    Conv2dT() = default;
    Conv2dT(int in_c, int out_c, int k, int s, int p)
        : in_ch(in_c), out_ch(out_c), kernel(k), stride(s), pad(p),
          weight({out_c, in_c, k, k}), grad_weight({out_c, in_c, k, k}) {}

    // He initialization scaled by the fan-out of the kernel.
    void init(Rng& rng) {
        const double fan_out = static_cast<double>(out_ch) * kernel * kernel;
        const double std = std::sqrt(2.0 / fan_out);
        for (auto& x : weight.v) x = static_cast<T>(rng.normal() * std);
        grad_weight.zero();
    }

    TensorT<T> forward(const TensorT<T>& x, bool train) {
        check_shape(x.rank() == 4 && x.dim(1) == in_ch,
                    "conv2d: expected (N," + std::to_string(in_ch) + ",H,W), got " + x.shape_str());
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const int oh = detail::conv_out_dim(h, kernel, stride, pad);
        const int ow = detail::conv_out_dim(w, kernel, stride, pad);
        check_shape(oh > 0 && ow > 0, "conv2d: input " + x.shape_str() + " too small for kernel");

        const long rows = static_cast<long>(in_ch) * kernel * kernel;
        const long cols_per = static_cast<long>(oh) * ow;
        const long row_len = cols_per * n;
        TensorT<T> cols({static_cast<int>(rows), static_cast<int>(row_len)});
        for (int i = 0; i < n; ++i)
            detail::im2col(x.v.data() + static_cast<long>(i) * in_ch * h * w, in_ch, h, w,
                           kernel, stride, pad, oh, ow, cols.v.data(), row_len, i * cols_per);

        // (out_ch, rows) x (rows, row_len) -> (out_ch, row_len)
        std::vector<T> prod(static_cast<size_t>(out_ch) * row_len);
        gemm(false, false, out_ch, static_cast<int>(row_len), static_cast<int>(rows), T(1),
             weight.v.data(), static_cast<int>(rows), cols.v.data(), static_cast<int>(row_len),
             T(0), prod.data(), static_cast<int>(row_len));

        TensorT<T> y({n, out_ch, oh, ow});
        for (int co = 0; co < out_ch; ++co)
            for (int i = 0; i < n; ++i)
                std::memcpy(&y.at(i, co, 0, 0), prod.data() + static_cast<long>(co) * row_len + i * cols_per,
                            sizeof(T) * cols_per);

        if (train) {
            cols_ = std::move(cols);
            in_shape_ = x.shape;
        }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& gy) {
        check_shape(!in_shape_.empty(), "conv2d: backward without cached forward");
        const int n = in_shape_[0], h = in_shape_[2], w = in_shape_[3];
        const int oh = gy.dim(2), ow = gy.dim(3);
        const long rows = static_cast<long>(in_ch) * kernel * kernel;
        const long cols_per = static_cast<long>(oh) * ow;
        const long row_len = cols_per * n;

        // Regroup gy from (N,Cout,OH,OW) to (Cout, N*OH*OW) to match cols_.
        std::vector<T> g(static_cast<size_t>(out_ch) * row_len);
        for (int co = 0; co < out_ch; ++co)
            for (int i = 0; i < n; ++i)
                std::memcpy(g.data() + static_cast<long>(co) * row_len + i * cols_per,
                            &gy.at(i, co, 0, 0), sizeof(T) * cols_per);

        // dW += g x cols^T : (out_ch, row_len) x (row_len, rows)
        gemm(false, true, out_ch, static_cast<int>(rows), static_cast<int>(row_len), T(1),
             g.data(), static_cast<int>(row_len), cols_.v.data(), static_cast<int>(row_len),
             T(1), grad_weight.v.data(), static_cast<int>(rows));

        // dcols = W^T x g : (rows, out_ch) x (out_ch, row_len)
        TensorT<T> dcols({static_cast<int>(rows), static_cast<int>(row_len)});
        gemm(true, false, static_cast<int>(rows), static_cast<int>(row_len), out_ch, T(1),
             weight.v.data(), static_cast<int>(rows), g.data(), static_cast<int>(row_len),
             T(0), dcols.v.data(), static_cast<int>(row_len));

        TensorT<T> gx(in_shape_);
        gx.zero();
        for (int i = 0; i < n; ++i)
            detail::col2im(dcols.v.data(), in_ch, h, w, kernel, stride, pad, oh, ow,
                           gx.v.data() + static_cast<long>(i) * in_ch * h * w, row_len, i * cols_per);
        return gx;
    }

    void collect(const std::string& prefix, std::vector<ParamRefT<T>>& out) {
        out.push_back({prefix + ".weight", &weight, &grad_weight});
    }

private:
    TensorT<T> cols_;
    std::vector<int> in_shape_;
};

// Transposed 2-D convolution (a.k.a. deconvolution), NCHW, no bias.
// Weight layout matches the dual convolution: (in_ch, out_ch, k, k).
template <typename T>
struct ConvTranspose2dT {
    int in_ch = 0, out_ch = 0, kernel = 0, stride = 1;
    TensorT<T> weight;  // (in_ch, out_ch, kernel, kernel)
    TensorT<T> grad_weight;

    ConvTranspose2dT() = default;
    ConvTranspose2dT(int in_c, int out_c, int k, int s)
        : in_ch(in_c), out_ch(out_c), kernel(k), stride(s),
          weight({in_c, out_c, k, k}), grad_weight({in_c, out_c, k, k}) {}

    void init(Rng& rng) {
        const double fan_out = static_cast<double>(out_ch) * kernel * kernel;
        const double std = std::sqrt(2.0 / fan_out);
        for (auto& x : weight.v) x = static_cast<T>(rng.normal() * std);
        grad_weight.zero();
    }

    // Forward is the data-gradient of the dual stride-`stride` convolution:
    // cols = W^T x input, then col2im onto the upsampled canvas.
    TensorT<T> forward(const TensorT<T>& x, bool train) {
        check_shape(x.rank() == 4 && x.dim(1) == in_ch,
                    "conv_transpose2d: expected (N," + std::to_string(in_ch) + ",H,W), got " + x.shape_str());
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const int oh = (h - 1) * stride + kernel;
        const int ow = (w - 1) * stride + kernel;
        const long rows = static_cast<long>(out_ch) * kernel * kernel;
        const long cols_per = static_cast<long>(h) * w;
        const long row_len = cols_per * n;

        // Regroup x to (in_ch, N*H*W).
        std::vector<T> xm(static_cast<size_t>(in_ch) * row_len);
        for (int ci = 0; ci < in_ch; ++ci)
            for (int i = 0; i < n; ++i)
                std::memcpy(xm.data() + static_cast<long>(ci) * row_len + i * cols_per,
                            &x.at(i, ci, 0, 0), sizeof(T) * cols_per);

        // cols = W^T x xm : (rows, in_ch) x (in_ch, row_len)
        TensorT<T> cols({static_cast<int>(rows), static_cast<int>(row_len)});
        gemm(true, false, static_cast<int>(rows), static_cast<int>(row_len), in_ch, T(1),
             weight.v.data(), static_cast<int>(rows), xm.data(), static_cast<int>(row_len),
             T(0), cols.v.data(), static_cast<int>(row_len));

        TensorT<T> y({n, out_ch, oh, ow});
        y.zero();
        for (int i = 0; i < n; ++i)
            detail::col2im(cols.v.data(), out_ch, oh, ow, kernel, stride, 0, h, w,
                           y.v.data() + static_cast<long>(i) * out_ch * oh * ow, row_len, i * cols_per);

        if (train) {
            xm_ = std::move(xm);
            in_shape_ = x.shape;
        }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& gy) {
        check_shape(!in_shape_.empty(), "conv_transpose2d: backward without cached forward");
        const int n = in_shape_[0], h = in_shape_[2], w = in_shape_[3];
        const int oh = gy.dim(2), ow = gy.dim(3);
        const long rows = static_cast<long>(out_ch) * kernel * kernel;
        const long cols_per = static_cast<long>(h) * w;
        const long row_len = cols_per * n;

        // gcols = im2col(gy) under the dual convolution's geometry.
        TensorT<T> gcols({static_cast<int>(rows), static_cast<int>(row_len)});
        for (int i = 0; i < n; ++i)
            detail::im2col(gy.v.data() + static_cast<long>(i) * out_ch * oh * ow, out_ch, oh, ow,
                           kernel, stride, 0, h, w, gcols.v.data(), row_len, i * cols_per);

        // dW += xm x gcols^T : (in_ch, row_len) x (row_len, rows)
        gemm(false, true, in_ch, static_cast<int>(rows), static_cast<int>(row_len), T(1),
             xm_.data(), static_cast<int>(row_len), gcols.v.data(), static_cast<int>(row_len),
             T(1), grad_weight.v.data(), static_cast<int>(rows));

        // gx = W x gcols : (in_ch, rows) x (rows, row_len)
        std::vector<T> gxm(static_cast<size_t>(in_ch) * row_len);
        gemm(false, false, in_ch, static_cast<int>(row_len), static_cast<int>(rows), T(1),
             weight.v.data(), static_cast<int>(rows), gcols.v.data(), static_cast<int>(row_len),
             T(0), gxm.data(), static_cast<int>(row_len));

        TensorT<T> gx(in_shape_);
        for (int ci = 0; ci < in_ch; ++ci)
            for (int i = 0; i < n; ++i)
                std::memcpy(&gx.at(i, ci, 0, 0), gxm.data() + static_cast<long>(ci) * row_len + i * cols_per,
                            sizeof(T) * cols_per);
        return gx;
    }

    void collect(const std::string& prefix, std::vector<ParamRefT<T>>& out) {
        out.push_back({prefix + ".weight", &weight, &grad_weight});
    }

private:
    std::vector<T> xm_;
    std::vector<int> in_shape_;
};

// Batch normalization over (N,H,W) per channel, with selectable statistics.
template <typename T>
struct BatchNorm2dT {
    int channels = 0;
    T eps = T(1e-5);
    T momentum = T(0.1);
    T var_floor = T(1e-3);
    TensorT<T> gamma, beta, grad_gamma, grad_beta;
    TensorT<T> running_mean, running_var;

    BatchNorm2dT() = default;
    explicit BatchNorm2dT(int c)
        : channels(c), gamma({c}), beta({c}), grad_gamma({c}), grad_beta({c}),
          running_mean({c}), running_var({c}) {
        for (auto& x : gamma.v) x = T(1);
        beta.zero();
        running_mean.zero();
        for (auto& x : running_var.v) x = T(1);
        grad_gamma.zero();
        grad_beta.zero();
    }

    TensorT<T> forward(const TensorT<T>& x, BnMode mode, bool train) {
        check_shape(x.rank() == 4 && x.dim(1) == channels,
                    "batchnorm2d: expected (N," + std::to_string(channels) + ",H,W), got " + x.shape_str());
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const long m = static_cast<long>(n) * h * w;
        check_shape(mode == BnMode::kRunning || m >= 2,
                    "batchnorm2d: batch statistics need at least 2 values per channel");

        std::vector<T> mean(channels), var(channels);
        std::vector<uint8_t> floored(channels, 0);
        if (mode == BnMode::kRunning) {
            for (int c = 0; c < channels; ++c) {
                mean[c] = running_mean.v[c];
                var[c] = running_var.v[c];
            }
        } else {
            for (int c = 0; c < channels; ++c) {
                double s = 0.0, s2 = 0.0;
                for (int i = 0; i < n; ++i) {
                    const T* p = &x.at(i, c, 0, 0);
                    for (long j = 0; j < static_cast<long>(h) * w; ++j) {
                        s += p[j];
                        s2 += static_cast<double>(p[j]) * p[j];
                    }
                }
                const double mu = s / static_cast<double>(m);
                double v = s2 / static_cast<double>(m) - mu * mu;
                if (v < 0) v = 0;  // numerical guard
                mean[c] = static_cast<T>(mu);
                var[c] = static_cast<T>(v);
                if (mode == BnMode::kBatchVarFloor && var[c] < var_floor) {
                    var[c] = running_var.v[c];
                    floored[c] = 1;
                }
            }
            if (mode == BnMode::kBatch) {
                // Unbiased variance feeds the running estimate, per convention.
                const T unbias = m > 1 ? static_cast<T>(m) / static_cast<T>(m - 1) : T(1);
                for (int c = 0; c < channels; ++c) {
                    running_mean.v[c] = (T(1) - momentum) * running_mean.v[c] + momentum * mean[c];
                    running_var.v[c] = (T(1) - momentum) * running_var.v[c] + momentum * var[c] * unbias;
                }
            }
        }

        TensorT<T> y(x.shape);
        TensorT<T> xhat;
        const bool need_xhat = train && mode != BnMode::kRunning;
        if (need_xhat) xhat = TensorT<T>(x.shape);
        for (int c = 0; c < channels; ++c) {
            const T inv = T(1) / std::sqrt(var[c] + eps);
            const T g = gamma.v[c], b = beta.v[c], mu = mean[c];
            for (int i = 0; i < n; ++i) {
                const T* px = &x.at(i, c, 0, 0);
                T* py = &y.at(i, c, 0, 0);
                T* ph = need_xhat ? &xhat.at(i, c, 0, 0) : nullptr;
                for (long j = 0; j < static_cast<long>(h) * w; ++j) {
                    const T xh = (px[j] - mu) * inv;
                    if (ph) ph[j] = xh;
                    py[j] = g * xh + b;
                }
            }
        }

        if (train) {
            mode_ = mode;
            inv_std_.assign(channels, T(0));
            for (int c = 0; c < channels; ++c) inv_std_[c] = T(1) / std::sqrt(var[c] + eps);
            floored_ = std::move(floored);
            if (need_xhat) xhat_ = std::move(xhat);
            else if (mode == BnMode::kRunning) {
                // Running-stats backward only needs gamma/inv_std, but grad_gamma
                // needs xhat; cache it here too.
                xhat_ = TensorT<T>(x.shape);
                for (int c = 0; c < channels; ++c) {
                    const T inv = inv_std_[c], mu = mean[c];
                    for (int i = 0; i < n; ++i) {
                        const T* px = &x.at(i, c, 0, 0);
                        T* ph = &xhat_.at(i, c, 0, 0);
                        for (long j = 0; j < static_cast<long>(h) * w; ++j) ph[j] = (px[j] - mu) * inv;
                    }
                }
            }
            have_ctx_ = true;
        }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& gy) {
        check_shape(have_ctx_, "batchnorm2d: backward without cached forward");
        const int n = gy.dim(0), h = gy.dim(2), w = gy.dim(3);
        const long m = static_cast<long>(n) * h * w;
        TensorT<T> gx(gy.shape);
        for (int c = 0; c < channels; ++c) {
            double sum_gy = 0.0, sum_gy_xhat = 0.0;
            for (int i = 0; i < n; ++i) {
                const T* pg = &gy.at(i, c, 0, 0);
                const T* ph = &xhat_.at(i, c, 0, 0);
                for (long j = 0; j < static_cast<long>(h) * w; ++j) {
                    sum_gy += pg[j];
                    sum_gy_xhat += static_cast<double>(pg[j]) * ph[j];
                }
            }
            grad_gamma.v[c] += static_cast<T>(sum_gy_xhat);
            grad_beta.v[c] += static_cast<T>(sum_gy);

            const T g_inv = gamma.v[c] * inv_std_[c];
            const T mean_gy = static_cast<T>(sum_gy / static_cast<double>(m));
            const T mean_gy_xhat = static_cast<T>(sum_gy_xhat / static_cast<double>(m));
            // Which statistics were data-dependent decides the backward form:
            //   batch mean+var : full correction (mean and xhat terms)
            //   batch mean only: mean term only (variance was a constant)
            //   running        : plain scaling
            const bool mean_is_batch = mode_ != BnMode::kRunning;
            for (int i = 0; i < n; ++i) {
                const T* pg = &gy.at(i, c, 0, 0);
                const T* ph = &xhat_.at(i, c, 0, 0);
                T* px = &gx.at(i, c, 0, 0);
                for (long j = 0; j < static_cast<long>(h) * w; ++j) {
                    T t = pg[j];
                    if (mean_is_batch) t -= mean_gy;
                    const bool var_is_batch =
                        mode_ == BnMode::kBatch || (mode_ == BnMode::kBatchVarFloor && !floored_[c]);
                    if (var_is_batch) t -= ph[j] * mean_gy_xhat;
                    px[j] = g_inv * t;
                }
            }
        }
        return gx;
    }

    void collect(const std::string& prefix, std::vector<ParamRefT<T>>& out) {
        out.push_back({prefix + ".weight", &gamma, &grad_gamma});
        out.push_back({prefix + ".bias", &beta, &grad_beta});
    }

    void collect_buffers(const std::string& prefix, std::vector<BufRefT<T>>& out) {
        out.push_back({prefix + ".running_mean", &running_mean});
        out.push_back({prefix + ".running_var", &running_var});
    }

private:
    BnMode mode_ = BnMode::kBatch;
    std::vector<T> inv_std_;
    std::vector<uint8_t> floored_;
    TensorT<T> xhat_;
    bool have_ctx_ = false;
};

// Max pooling with square window; ties resolve to the first scan position.
template <typename T>
struct MaxPool2dT {
    int kernel = 0, stride = 1, pad = 0;

    MaxPool2dT() = default;
    MaxPool2dT(int k, int s, int p) : kernel(k), stride(s), pad(p) {}

    TensorT<T> forward(const TensorT<T>& x, bool train) {
        check_shape(x.rank() == 4, "maxpool2d: expected 4-d input, got " + x.shape_str());
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const int oh = detail::conv_out_dim(h, kernel, stride, pad);
        const int ow = detail::conv_out_dim(w, kernel, stride, pad);
        TensorT<T> y({n, c, oh, ow});
        if (train) {
            argmax_.assign(y.numel(), -1);
            in_shape_ = x.shape;
        }
        long out_idx = 0;
        for (int i = 0; i < n; ++i)
            for (int ci = 0; ci < c; ++ci) {
                const T* plane = &x.at(i, ci, 0, 0);
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox, ++out_idx) {
                        T best = -std::numeric_limits<T>::infinity();
                        long best_at = -1;
                        for (int ky = 0; ky < kernel; ++ky) {
                            const int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= h) continue;
                            for (int kx = 0; kx < kernel; ++kx) {
                                const int ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= w) continue;
                                const T v = plane[static_cast<long>(iy) * w + ix];
                                if (v > best) {
                                    best = v;
                                    best_at = static_cast<long>(iy) * w + ix;
                                }
                            }
                        }
                        check_shape(best_at >= 0, "maxpool2d: empty pooling window");
                        y.v[out_idx] = best;
                        if (train) argmax_[out_idx] = (static_cast<long>(i) * c + ci) * h * w + best_at;
                    }
            }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& gy) {
        check_shape(!in_shape_.empty(), "maxpool2d: backward without cached forward");
        TensorT<T> gx(in_shape_);
        gx.zero();
        for (long i = 0; i < gy.numel(); ++i) gx.v[argmax_[i]] += gy.v[i];
        return gx;
    }

private:
    std::vector<long> argmax_;
    std::vector<int> in_shape_;
};

// Rectified linear unit.
template <typename T>
struct ReluT {
    TensorT<T> forward(const TensorT<T>& x, bool train) {
        TensorT<T> y(x.shape);
        if (train) mask_.assign(x.numel(), 0);
        for (long i = 0; i < x.numel(); ++i) {
            const bool pos = x.v[i] > T(0);
            y.v[i] = pos ? x.v[i] : T(0);
            if (train && pos) mask_[i] = 1;
        }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& gy) {
        check_shape(static_cast<long>(mask_.size()) == gy.numel(),
                    "relu: backward without matching cached forward");
        TensorT<T> gx(gy.shape);
        for (long i = 0; i < gy.numel(); ++i) gx.v[i] = mask_[i] ? gy.v[i] : T(0);
        return gx;
    }

private:
    std::vector<uint8_t> mask_;
};

using Conv2d = Conv2dT<float>;
using ConvTranspose2d = ConvTranspose2dT<float>;
using BatchNorm2d = BatchNorm2dT<float>;
using MaxPool2d = MaxPool2dT<float>;
using Relu = ReluT<float>;

}  // namespace fcad::nn
