#pragma once

// Residual blocks for the feature-pyramid networks: the two classic encoder
// block shapes (basic and 1x1-3x3-1x1 bottleneck, with an optional width
// multiplier for wide variants) and their decoder duals, where the stride-2
// downsampling convolution is replaced by a 2x2 stride-2 transposed
// convolution that doubles resolution instead of halving it.
//
// Blocks own their layers and cache one forward context; backward() must
// mirror the most recent forward(). The batch-norm statistics mode is chosen
// by the caller per forward pass, because the same block graph is run under
// different normalization regimes (batch stats while training, running stats
// when frozen or evaluating, variance-floored batch stats as a guard).

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fcad/nn/layers.hpp"

namespace fcad::nn {

template <typename T>
struct BlockT {
    virtual ~BlockT() = default;
    virtual TensorT<T> forward(const TensorT<T>& x, BnMode mode, bool train) = 0;
    virtual TensorT<T> backward(const TensorT<T>& gy) = 0;
    virtual void init(Rng& rng) = 0;
    virtual void collect(const std::string& prefix, std::vector<ParamRefT<T>>& out) = 0;
    virtual void collect_buffers(const std::string& prefix, std::vector<BufRefT<T>>& out) = 0;
    virtual int out_channels() const = 0;
};

namespace detail {

template <typename T>
void add_inplace(TensorT<T>& a, const TensorT<T>& b) {
    check_shape(a.same_shape(b), "residual add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    for (long i = 0; i < a.numel(); ++i) a.v[i] += b.v[i];
}

}  // namespace detail

// Two 3x3 convolutions with an identity (or projected) shortcut.
template <typename T>
struct BasicBlockT final : BlockT<T> {
    static constexpr int kExpansion = 1;

    BasicBlockT(int in_ch, int planes, int stride)
        : conv1_(in_ch, planes, 3, stride, 1), bn1_(planes),
          conv2_(planes, planes, 3, 1, 1), bn2_(planes), out_ch_(planes) {
        if (stride != 1 || in_ch != planes) {
            proj_conv_.emplace(in_ch, planes, 1, stride, 0);
            proj_bn_.emplace(planes);
        }
    }

    TensorT<T> forward(const TensorT<T>& x, BnMode mode, bool train) override {
        auto out = relu1_.forward(bn1_.forward(conv1_.forward(x, train), mode, train), train);
        out = bn2_.forward(conv2_.forward(out, train), mode, train);
        if (proj_conv_) detail::add_inplace(out, proj_bn_->forward(proj_conv_->forward(x, train), mode, train));
        else detail::add_inplace(out, x);
        return relu2_.forward(out, train);
    }

    TensorT<T> backward(const TensorT<T>& gy) override {
        auto g = relu2_.backward(gy);
        auto gx = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(g)))));
        if (proj_conv_) detail::add_inplace(gx, proj_conv_->backward(proj_bn_->backward(g)));
        else detail::add_inplace(gx, g);
        return gx;
    }

    void init(Rng& rng) override {
        conv1_.init(rng);
        conv2_.init(rng);
        if (proj_conv_) proj_conv_->init(rng);
    }

    void collect(const std::string& p, std::vector<ParamRefT<T>>& out) override {
        conv1_.collect(p + ".conv1", out);
        bn1_.collect(p + ".bn1", out);
        conv2_.collect(p + ".conv2", out);
        bn2_.collect(p + ".bn2", out);
        if (proj_conv_) {
            proj_conv_->collect(p + ".downsample.0", out);
            proj_bn_->collect(p + ".downsample.1", out);
        }
    }

    void collect_buffers(const std::string& p, std::vector<BufRefT<T>>& out) override {
        bn1_.collect_buffers(p + ".bn1", out);
        bn2_.collect_buffers(p + ".bn2", out);
        if (proj_bn_) proj_bn_->collect_buffers(p + ".downsample.1", out);
    }

    int out_channels() const override { return out_ch_; }

private:
    Conv2dT<T> conv1_;
    BatchNorm2dT<T> bn1_;
    Conv2dT<T> conv2_;
    BatchNorm2dT<T> bn2_;
    std::optional<Conv2dT<T>> proj_conv_;
    std::optional<BatchNorm2dT<T>> proj_bn_;
    ReluT<T> relu1_, relu2_;
    int out_ch_;
};

// 1x1 reduce, 3x3 (optionally widened), 1x1 expand, with projected shortcut.
template <typename T>
struct BottleneckBlockT final : BlockT<T> {
    static constexpr int kExpansion = 4;

    BottleneckBlockT(int in_ch, int planes, int stride, int width_factor)
        : width_(planes * width_factor),
          conv1_(in_ch, width_, 1, 1, 0), bn1_(width_),
          conv2_(width_, width_, 3, stride, 1), bn2_(width_),
          conv3_(width_, planes * kExpansion, 1, 1, 0), bn3_(planes * kExpansion),
          out_ch_(planes * kExpansion) {
        if (stride != 1 || in_ch != out_ch_) {
            proj_conv_.emplace(in_ch, out_ch_, 1, stride, 0);
            proj_bn_.emplace(out_ch_);
        }
    }

    TensorT<T> forward(const TensorT<T>& x, BnMode mode, bool train) override {
        auto out = relu1_.forward(bn1_.forward(conv1_.forward(x, train), mode, train), train);
        out = relu2_.forward(bn2_.forward(conv2_.forward(out, train), mode, train), train);
        out = bn3_.forward(conv3_.forward(out, train), mode, train);
        if (proj_conv_) detail::add_inplace(out, proj_bn_->forward(proj_conv_->forward(x, train), mode, train));
        else detail::add_inplace(out, x);
        return relu3_.forward(out, train);
    }

    TensorT<T> backward(const TensorT<T>& gy) override {
        auto g = relu3_.backward(gy);
        auto gm = conv3_.backward(bn3_.backward(g));
        gm = conv2_.backward(bn2_.backward(relu2_.backward(gm)));
        auto gx = conv1_.backward(bn1_.backward(relu1_.backward(gm)));
        if (proj_conv_) detail::add_inplace(gx, proj_conv_->backward(proj_bn_->backward(g)));
        else detail::add_inplace(gx, g);
        return gx;
    }

    void init(Rng& rng) override {
        conv1_.init(rng);
        conv2_.init(rng);
        conv3_.init(rng);
        if (proj_conv_) proj_conv_->init(rng);
    }

    void collect(const std::string& p, std::vector<ParamRefT<T>>& out) override {
        conv1_.collect(p + ".conv1", out);
        bn1_.collect(p + ".bn1", out);
        conv2_.collect(p + ".conv2", out);
        bn2_.collect(p + ".bn2", out);
        conv3_.collect(p + ".conv3", out);
        bn3_.collect(p + ".bn3", out);
        if (proj_conv_) {
            proj_conv_->collect(p + ".downsample.0", out);
            proj_bn_->collect(p + ".downsample.1", out);
        }
    }

    void collect_buffers(const std::string& p, std::vector<BufRefT<T>>& out) override {
        bn1_.collect_buffers(p + ".bn1", out);
        bn2_.collect_buffers(p + ".bn2", out);
        bn3_.collect_buffers(p + ".bn3", out);
        if (proj_bn_) proj_bn_->collect_buffers(p + ".downsample.1", out);
    }

    int out_channels() const override { return out_ch_; }

private:
    int width_;
    Conv2dT<T> conv1_;
    BatchNorm2dT<T> bn1_;
    Conv2dT<T> conv2_;
    BatchNorm2dT<T> bn2_;
    Conv2dT<T> conv3_;
    BatchNorm2dT<T> bn3_;
    std::optional<Conv2dT<T>> proj_conv_;
    std::optional<BatchNorm2dT<T>> proj_bn_;
    ReluT<T> relu1_, relu2_, relu3_;
    int out_ch_;
};

// Decoder dual of BasicBlockT: a stride-2 block upsamples with a 2x2
// stride-2 transposed convolution on both the main path and the shortcut.
template <typename T>
struct UpBasicBlockT final : BlockT<T> {
    static constexpr int kExpansion = 1;

    UpBasicBlockT(int in_ch, int planes, int stride)
        : bn1_(planes), conv2_(planes, planes, 3, 1, 1), bn2_(planes), out_ch_(planes) {
        check_config(stride == 1 || stride == 2, "decoder block: stride must be 1 or 2");
        if (stride == 2) {
            up1_.emplace(in_ch, planes, 2, 2);
            proj_up_.emplace(in_ch, planes, 2, 2);
            proj_bn_.emplace(planes);
        } else {
            conv1_.emplace(in_ch, planes, 3, 1, 1);
            if (in_ch != planes) {
                proj_conv_.emplace(in_ch, planes, 1, 1, 0);
                proj_bn_.emplace(planes);
            }
        }
    }

    TensorT<T> forward(const TensorT<T>& x, BnMode mode, bool train) override {
        auto out = up1_ ? up1_->forward(x, train) : conv1_->forward(x, train);
        out = relu1_.forward(bn1_.forward(out, mode, train), train);
        out = bn2_.forward(conv2_.forward(out, train), mode, train);
        if (proj_up_) detail::add_inplace(out, proj_bn_->forward(proj_up_->forward(x, train), mode, train));
        else if (proj_conv_) detail::add_inplace(out, proj_bn_->forward(proj_conv_->forward(x, train), mode, train));
        else detail::add_inplace(out, x);
        return relu2_.forward(out, train);
    }

    TensorT<T> backward(const TensorT<T>& gy) override {
        auto g = relu2_.backward(gy);
        auto gm = bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(g))));
        auto gx = up1_ ? up1_->backward(gm) : conv1_->backward(gm);
        if (proj_up_) detail::add_inplace(gx, proj_up_->backward(proj_bn_->backward(g)));
        else if (proj_conv_) detail::add_inplace(gx, proj_conv_->backward(proj_bn_->backward(g)));
        else detail::add_inplace(gx, g);
        return gx;
    }

    void init(Rng& rng) override {
        if (up1_) up1_->init(rng);
        if (conv1_) conv1_->init(rng);
        conv2_.init(rng);
        if (proj_up_) proj_up_->init(rng);
        if (proj_conv_) proj_conv_->init(rng);
    }

    void collect(const std::string& p, std::vector<ParamRefT<T>>& out) override {
        if (up1_) up1_->collect(p + ".conv1", out);
        if (conv1_) conv1_->collect(p + ".conv1", out);
        bn1_.collect(p + ".bn1", out);
        conv2_.collect(p + ".conv2", out);
        bn2_.collect(p + ".bn2", out);
        if (proj_up_) proj_up_->collect(p + ".upsample.0", out);
        if (proj_conv_) proj_conv_->collect(p + ".upsample.0", out);
        if (proj_bn_) proj_bn_->collect(p + ".upsample.1", out);
    }

    void collect_buffers(const std::string& p, std::vector<BufRefT<T>>& out) override {
        bn1_.collect_buffers(p + ".bn1", out);
        bn2_.collect_buffers(p + ".bn2", out);
        if (proj_bn_) proj_bn_->collect_buffers(p + ".upsample.1", out);
    }

    int out_channels() const override { return out_ch_; }

private:
    std::optional<ConvTranspose2dT<T>> up1_;
    std::optional<Conv2dT<T>> conv1_;
    BatchNorm2dT<T> bn1_;
    Conv2dT<T> conv2_;
    BatchNorm2dT<T> bn2_;
    std::optional<ConvTranspose2dT<T>> proj_up_;
    std::optional<Conv2dT<T>> proj_conv_;
    std::optional<BatchNorm2dT<T>> proj_bn_;
    ReluT<T> relu1_, relu2_;
    int out_ch_;
};

// Decoder dual of BottleneckBlockT: the middle 3x3 becomes a 2x2 stride-2
// transposed convolution when the block upsamples.
template <typename T>
struct UpBottleneckBlockT final : BlockT<T> {
    static constexpr int kExpansion = 4;

    UpBottleneckBlockT(int in_ch, int planes, int stride, int width_factor)
        : width_(planes * width_factor),
          conv1_(in_ch, width_, 1, 1, 0), bn1_(width_), bn2_(width_),
          conv3_(width_, planes * kExpansion, 1, 1, 0), bn3_(planes * kExpansion),
          out_ch_(planes * kExpansion) {
        check_config(stride == 1 || stride == 2, "decoder block: stride must be 1 or 2");
        if (stride == 2) {
            up2_.emplace(width_, width_, 2, 2);
            proj_up_.emplace(in_ch, out_ch_, 2, 2);
            proj_bn_.emplace(out_ch_);
        } else {
            conv2_.emplace(width_, width_, 3, 1, 1);
            if (in_ch != out_ch_) {
                proj_conv_.emplace(in_ch, out_ch_, 1, 1, 0);
                proj_bn_.emplace(out_ch_);
            }
        }
    }

    TensorT<T> forward(const TensorT<T>& x, BnMode mode, bool train) override {
        auto out = relu1_.forward(bn1_.forward(conv1_.forward(x, train), mode, train), train);
        out = up2_ ? up2_->forward(out, train) : conv2_->forward(out, train);
        out = relu2_.forward(bn2_.forward(out, mode, train), train);
        out = bn3_.forward(conv3_.forward(out, train), mode, train);
        if (proj_up_) detail::add_inplace(out, proj_bn_->forward(proj_up_->forward(x, train), mode, train));
        else if (proj_conv_) detail::add_inplace(out, proj_bn_->forward(proj_conv_->forward(x, train), mode, train));
        else detail::add_inplace(out, x);
        return relu3_.forward(out, train);
    }

    TensorT<T> backward(const TensorT<T>& gy) override {
        auto g = relu3_.backward(gy);
        auto gm = bn2_.backward(relu2_.backward(conv3_.backward(bn3_.backward(g))));
        gm = up2_ ? up2_->backward(gm) : conv2_->backward(gm);
        auto gx = conv1_.backward(bn1_.backward(relu1_.backward(gm)));
        if (proj_up_) detail::add_inplace(gx, proj_up_->backward(proj_bn_->backward(g)));
        else if (proj_conv_) detail::add_inplace(gx, proj_conv_->backward(proj_bn_->backward(g)));
        else detail::add_inplace(gx, g);
        return gx;
    }

    void init(Rng& rng) override {
        conv1_.init(rng);
        if (up2_) up2_->init(rng);
        if (conv2_) conv2_->init(rng);
        conv3_.init(rng);
        if (proj_up_) proj_up_->init(rng);
        if (proj_conv_) proj_conv_->init(rng);
    }

    void collect(const std::string& p, std::vector<ParamRefT<T>>& out) override {
        conv1_.collect(p + ".conv1", out);
        bn1_.collect(p + ".bn1", out);
        if (up2_) up2_->collect(p + ".conv2", out);
        if (conv2_) conv2_->collect(p + ".conv2", out);
        bn2_.collect(p + ".bn2", out);
        conv3_.collect(p + ".conv3", out);
        bn3_.collect(p + ".bn3", out);
        if (proj_up_) proj_up_->collect(p + ".upsample.0", out);
        if (proj_conv_) proj_conv_->collect(p + ".upsample.0", out);
        if (proj_bn_) proj_bn_->collect(p + ".upsample.1", out);
    }

    void collect_buffers(const std::string& p, std::vector<BufRefT<T>>& out) override {
        bn1_.collect_buffers(p + ".bn1", out);
        bn2_.collect_buffers(p + ".bn2", out);
        bn3_.collect_buffers(p + ".bn3", out);
        if (proj_bn_) proj_bn_->collect_buffers(p + ".upsample.1", out);
    }

    int out_channels() const override { return out_ch_; }

private:
    int width_;
    Conv2dT<T> conv1_;
    BatchNorm2dT<T> bn1_;
    std::optional<ConvTranspose2dT<T>> up2_;
    std::optional<Conv2dT<T>> conv2_;
    BatchNorm2dT<T> bn2_;
    Conv2dT<T> conv3_;
    BatchNorm2dT<T> bn3_;
    std::optional<ConvTranspose2dT<T>> proj_up_;
    std::optional<Conv2dT<T>> proj_conv_;
    std::optional<BatchNorm2dT<T>> proj_bn_;
    ReluT<T> relu1_, relu2_, relu3_;
    int out_ch_;
};

// A stage: `count` blocks where only the first changes stride/channels.
// `kind` selects the block family; decoder kinds upsample on stride 2.
enum class BlockKind { kBasic, kBottleneck, kUpBasic, kUpBottleneck };

template <typename T>
std::vector<std::unique_ptr<BlockT<T>>> make_stage(BlockKind kind, int in_ch, int planes,
                                                   int count, int stride, int width_factor = 1) {
    check_config(count >= 1, "make_stage: need at least one block");
    std::vector<std::unique_ptr<BlockT<T>>> blocks;
    int ch = in_ch;
    for (int i = 0; i < count; ++i) {
        const int s = i == 0 ? stride : 1;
        switch (kind) {
            case BlockKind::kBasic:
                blocks.push_back(std::make_unique<BasicBlockT<T>>(ch, planes, s));
                break;
            case BlockKind::kBottleneck:
                blocks.push_back(std::make_unique<BottleneckBlockT<T>>(ch, planes, s, width_factor));
                break;
            case BlockKind::kUpBasic:
                blocks.push_back(std::make_unique<UpBasicBlockT<T>>(ch, planes, s));
                break;
            case BlockKind::kUpBottleneck:
                blocks.push_back(std::make_unique<UpBottleneckBlockT<T>>(ch, planes, s, width_factor));
                break;
        }
        ch = blocks.back()->out_channels();
    }
    return blocks;
}

}  // namespace fcad::nn
