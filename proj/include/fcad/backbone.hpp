#pragma once

// Feature-pyramid networks for reconstruction-based anomaly detection:
//
//   Encoder            first three stages of a 4-stage residual classifier
//                      (stem + layer1..3), emitting a 3-stage pyramid at
//                      strides 4/8/16.
//   FusionBottleneck   downsamples stages 1-2 to stage-3 resolution with
//                      strided conv+BN+ReLU paths, concatenates all three,
//                      and applies one fourth-stage residual block, yielding
//                      a single latent at stride 32.
//   Decoder            the encoder reversed: stage order flipped and each
//                      stride-2 downsampling replaced by a 2x2 stride-2
//                      transposed convolution; reconstructs the pyramid from
//                      the latent.
//
// All three support explicit backward passes that accumulate parameter
// gradients, so a training loop can stitch them together without a general
// autograd. Checkpoints are a flat name->tensor binary file plus a JSON
// sidecar carrying architecture id and preprocessing constants.

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fcad/nn/blocks.hpp"
#include "fcad/nn/layers.hpp"

namespace fcad {

using Pyramid = std::vector<Tensor>;

enum class BackboneId { kSmall18, kMedium50, kWide50 };

BackboneId parse_backbone_id(const std::string& name);
std::string backbone_name(BackboneId id);

// How batch normalization inside an optimized encoder behaves during
// training; see nn::BnMode for the statistic semantics.
enum class BnPolicy { kTrainMode, kEvalMode, kVarSubstitute };

BnPolicy parse_bn_policy(const std::string& name);
std::string bn_policy_name(BnPolicy p);
nn::BnMode bn_mode_for(BnPolicy p);

// Static facts about one backbone family.
struct BackboneSpec {
    nn::BlockKind encoder_block;
    nn::BlockKind decoder_block;
    int width_factor;             // 3x3 width multiplier inside bottleneck blocks
    std::array<int, 3> counts;    // residual blocks per encoder stage
    std::array<int, 3> channels;  // pyramid channels per stage
    int latent_channels;          // bottleneck output channels (stride 32)
};

BackboneSpec backbone_spec(BackboneId id);

class Encoder {
public:
    Encoder() = default;
    explicit Encoder(BackboneId id);

    // Emits the 3-stage pyramid. `mode` applies to every BN in the network.
    Pyramid forward(const Tensor& x, nn::BnMode mode, bool train);

    // Accumulates parameter gradients given the gradient w.r.t. each emitted
    // stage (encoder stage order). The input-image gradient is discarded.
    void backward(const Pyramid& gstages);

    void init(Rng& rng);
    void collect(const std::string& prefix, std::vector<nn::ParamRef>& out);
    void collect_buffers(const std::string& prefix, std::vector<nn::BufRef>& out);
    BackboneId id() const { return id_; }

private:
    BackboneId id_ = BackboneId::kSmall18;
    nn::Conv2d stem_conv_;
    nn::BatchNorm2d stem_bn_;
    nn::Relu stem_relu_;
    nn::MaxPool2d stem_pool_{3, 2, 1};
    std::vector<std::unique_ptr<nn::BlockT<float>>> layers_[3];
};

class FusionBottleneck {
public:
    FusionBottleneck() = default;
    explicit FusionBottleneck(BackboneId id);

    Tensor forward(const Pyramid& p, nn::BnMode mode, bool train);
    // Returns gradients w.r.t. the three pyramid inputs.
    Pyramid backward(const Tensor& glatent);

    void init(Rng& rng);
    void collect(const std::string& prefix, std::vector<nn::ParamRef>& out);
    void collect_buffers(const std::string& prefix, std::vector<nn::BufRef>& out);

private:
    std::array<int, 3> channels_{};
    nn::Conv2d f1_conv1_, f1_conv2_, f2_conv1_;
    nn::BatchNorm2d f1_bn1_, f1_bn2_, f2_bn1_;
    nn::Relu f1_relu1_, f1_relu2_, f2_relu1_;
    std::unique_ptr<nn::BlockT<float>> block_;
};

class Decoder {
public:
    Decoder() = default;
    explicit Decoder(BackboneId id);

    // Runs deepest stage first; the returned pyramid is reported in encoder
    // stage order so stage k aligns with encoder stage k.
    Pyramid forward(const Tensor& latent, nn::BnMode mode, bool train);
    // `gstages` in encoder stage order; returns the latent gradient.
    Tensor backward(const Pyramid& gstages);

    void init(Rng& rng);
    void collect(const std::string& prefix, std::vector<nn::ParamRef>& out);
    void collect_buffers(const std::string& prefix, std::vector<nn::BufRef>& out);

private:
    // ups_[0] consumes the latent and emits stage 3; ups_[2] emits stage 1.
    std::vector<std::unique_ptr<nn::BlockT<float>>> ups_[3];
};

// One encoder/bottleneck/decoder trio plus its training-time switches.
struct BackboneBundle {
    BackboneId id = BackboneId::kSmall18;
    Encoder encoder;
    FusionBottleneck bottleneck;
    Decoder decoder;
    bool encoder_trainable = false;
    BnPolicy bn_policy = BnPolicy::kTrainMode;
};

// Builds a randomly initialized bundle (deterministic in `seed`).
BackboneBundle build_bundle(BackboneId id, uint64_t seed);

// --- parameter utilities ---------------------------------------------------

// Copies parameter and buffer values between structurally identical modules.
template <typename M>
void copy_module(M& dst, const M& src) {
    std::vector<nn::ParamRef> pd, ps;
    std::vector<nn::BufRef> bd, bs;
    dst.collect("m", pd);
    const_cast<M&>(src).collect("m", ps);
    dst.collect_buffers("m", bd);
    const_cast<M&>(src).collect_buffers("m", bs);
    check_config(pd.size() == ps.size() && bd.size() == bs.size(), "copy_module: structure mismatch");
    for (size_t i = 0; i < pd.size(); ++i) *pd[i].value = *ps[i].value;
    for (size_t i = 0; i < bd.size(); ++i) *bd[i].value = *bs[i].value;
}

// Order-stable checksum over all parameter values of a module.
template <typename M>
uint64_t param_checksum(M& m) {
    std::vector<nn::ParamRef> ps;
    m.collect("m", ps);
    uint64_t h = 1469598103934665603ull;
    for (auto& p : ps) {
        const uint64_t c = checksum(*p.value);
        h = fnv1a64(&c, sizeof(c), h);
    }
    return h;
}

void zero_grads(std::vector<nn::ParamRef>& params);

// --- checkpoints -------------------------------------------------------------

struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    std::string meta_json;  // sidecar content (may be empty on load if absent)
};

void save_checkpoint(const std::string& path, const std::vector<nn::ParamRef>& params,
                     const std::vector<nn::BufRef>& buffers, const std::string& meta_json);
Checkpoint load_checkpoint(const std::string& path);

// Assigns checkpoint tensors into the given refs; every ref must be present
// in the checkpoint with a matching shape, or an IoError names the offenders.
void assign_from_checkpoint(const Checkpoint& ckpt, const std::vector<nn::ParamRef>& params,
                            const std::vector<nn::BufRef>& buffers);

}  // namespace fcad
