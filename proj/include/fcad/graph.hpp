#pragma once

// Wires the backbone modules into the eight ablation configurations and owns
// the gradient-flow topology:
//
//   unpaired (A, B, C, D, B+)   one encoder; decoder(bottleneck(enc(x)))
//                               reconstructs that encoder's pyramid; 3 pairs.
//   paired   (E-, E, OURS)      a trainable encoder plus a permanently frozen
//                               copy of its initial weights; both pyramids are
//                               concatenated along the batch and pushed through
//                               the shared bottleneck+decoder in one pass, and
//                               each reconstruction is paired with the *other*
//                               encoder's pyramid; 6 pairs.
//
// The variant flags further control whether the trainable encoder is in the
// optimizer set, and whether loss gradients may flow into the target side of
// each pair.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fcad/backbone.hpp"
#include "fcad/losses.hpp"

namespace fcad {

enum class VariantName { kA, kB, kC, kD, kEMinus, kE, kBPlus, kOurs };

enum class LossKind { kRegional, kGlobal, kGlobalHM };

// One row of the ablation ladder.
struct ConfigVariant {
    VariantName name = VariantName::kOurs;
    LossKind loss_kind = LossKind::kGlobalHM;
    bool optimize_encoder = true;
    bool stop_gradient = true;
    bool paired_encoders = true;
};

ConfigVariant make_variant(VariantName name);
const std::vector<VariantName>& all_variants();

// Accepts "A", "B", "C", "D", "E-"/"E_MINUS", "E", "B+"/"B_PLUS", "OURS"
// (case-insensitive); throws ConfigError otherwise.
VariantName parse_variant(const std::string& s);
std::string variant_name(VariantName n);
std::string loss_kind_name(LossKind k);

// Output of one forward pass: per pass, the target pyramid (some encoder's
// stages) and the reconstruction pyramid aligned stage-by-stage. Unpaired
// variants produce one pass (3 stage pairs), paired variants two (6 pairs).
struct PassPair {
    Pyramid target;
    Pyramid recon;
};

struct PairSet {
    std::vector<PassPair> passes;

    int n_pairs() const { return static_cast<int>(3 * passes.size()); }
    // pair ids run pass-major: id = pass * 3 + stage
    const Tensor& target(int pair) const;
    const Tensor& recon(int pair) const;
};

// Per-pass loss gradients fed back into the graph. grad_target may be empty
// (or all-zero) when nothing flows into the target side.
struct PassGrads {
    Pyramid grad_recon;
    Pyramid grad_target;
};

// Optimizer parameter groups; every trainable parameter appears in exactly
// one group.
struct ParamGroups {
    std::vector<nn::ParamRef> new_params;         // bottleneck + decoder
    std::vector<nn::ParamRef> pretrained_params;  // trainable encoder, when optimized
};

class ModelGraph {
public:
    ModelGraph(const ConfigVariant& variant, BackboneId backbone, uint64_t seed,
               BnPolicy encoder_policy = BnPolicy::kTrainMode);

    // Runs the variant's forward wiring. With train=true, batch statistics
    // drive the bottleneck/decoder (and the trainable encoder per its BN
    // policy) and activations are cached for backward; with train=false,
    // everything runs on running statistics with no caching.
    PairSet forward(const Tensor& images, bool train);

    // Accumulates parameter gradients for the most recent train-mode forward.
    // `grads` must hold one entry per pass of that forward's PairSet.
    void backward(const std::vector<PassGrads>& grads);

    ParamGroups trainable_parameters();

    // All persistent state (trainable or not) under stable names, for
    // checkpointing. Paired variants include the frozen encoder copy.
    void collect_state(std::vector<nn::ParamRef>& params, std::vector<nn::BufRef>& buffers);

    const ConfigVariant& variant() const { return variant_; }
    BackboneId backbone() const { return backbone_; }
    BnPolicy encoder_policy() const { return encoder_policy_; }

    Encoder& encoder() { return encoder_; }
    FusionBottleneck& bottleneck() { return bottleneck_; }
    Decoder& decoder() { return decoder_; }

    bool has_frozen_encoder() const { return frozen_ != nullptr; }
    Encoder& frozen_encoder();
    uint64_t frozen_checksum();

private:
    ConfigVariant variant_;
    BackboneId backbone_;
    BnPolicy encoder_policy_;
    Encoder encoder_;
    FusionBottleneck bottleneck_;
    Decoder decoder_;
    std::unique_ptr<Encoder> frozen_;
    int last_batch_ = 0;  // per-encoder batch size of the last train forward
};

}  // namespace fcad
