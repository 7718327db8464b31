#include "fcad/graph.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>

namespace fcad {

namespace {

std::string upper(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return s;
}

// Concatenates two same-shaped-but-for-batch stage tensors along dim 0.
Tensor concat_batch(const Tensor& a, const Tensor& b) {
    check_shape(a.rank() == 4 && b.rank() == 4 && a.dim(1) == b.dim(1) &&
                    a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
                "concat_batch: incompatible stage shapes " + a.shape_str() + " vs " +
                    b.shape_str());
    Tensor out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2), a.dim(3)});
    std::memcpy(out.data(), a.data(), a.numel() * sizeof(float));
    std::memcpy(out.data() + a.numel(), b.data(), b.numel() * sizeof(float));
    return out;
}

// Rows [first, first+count) of a batched tensor.
Tensor slice_batch(const Tensor& t, int first, int count) {
    Tensor out({count, t.dim(1), t.dim(2), t.dim(3)});
    const size_t sample = t.numel() / static_cast<size_t>(t.dim(0));
    std::memcpy(out.data(), t.data() + static_cast<size_t>(first) * sample,
                out.numel() * sizeof(float));
    return out;
}

void add_pyramid(Pyramid& acc, const Pyramid& extra, const char* who) {
    check_shape(acc.size() == extra.size(), std::string(who) + ": pyramid length mismatch");
    for (size_t k = 0; k < acc.size(); ++k) {
        check_shape(acc[k].same_shape(extra[k]),
                    std::string(who) + ": stage shape mismatch " + acc[k].shape_str() +
                        " vs " + extra[k].shape_str());
        for (size_t i = 0; i < acc[k].numel(); ++i) acc[k].v[i] += extra[k].v[i];
    }
}

}  // namespace

ConfigVariant make_variant(VariantName name) {
    switch (name) {
        case VariantName::kA:
            return {name, LossKind::kRegional, false, false, false};
        case VariantName::kB:
            return {name, LossKind::kGlobal, false, false, false};
        case VariantName::kC:
            return {name, LossKind::kGlobal, true, false, false};
        case VariantName::kD:
            return {name, LossKind::kGlobal, true, true, false};
        case VariantName::kEMinus:
            return {name, LossKind::kGlobal, true, false, true};
        case VariantName::kE:
            return {name, LossKind::kGlobal, true, true, true};
        case VariantName::kBPlus:
            return {name, LossKind::kGlobalHM, false, false, false};
        case VariantName::kOurs:
            return {name, LossKind::kGlobalHM, true, true, true};
    }
    throw ConfigError("make_variant: unknown variant");
}

const std::vector<VariantName>& all_variants() {
    static const std::vector<VariantName> all = {
        VariantName::kA,      VariantName::kB, VariantName::kC,     VariantName::kD,
        VariantName::kEMinus, VariantName::kE, VariantName::kBPlus, VariantName::kOurs,
    };
    return all;
}

VariantName parse_variant(const std::string& s) {
    const std::string u = upper(s);
    if (u == "A") return VariantName::kA;
    if (u == "B") return VariantName::kB;
    if (u == "C") return VariantName::kC;
    if (u == "D") return VariantName::kD;
    if (u == "E-" || u == "E_MINUS" || u == "EMINUS") return VariantName::kEMinus;
    if (u == "E") return VariantName::kE;
    if (u == "B+" || u == "B_PLUS" || u == "BPLUS") return VariantName::kBPlus;
    if (u == "OURS") return VariantName::kOurs;
    throw ConfigError("unknown variant '" + s + "'; expected one of A, B, C, D, E-, E, B+, OURS");
}

std::string variant_name(VariantName n) {
    switch (n) {
        case VariantName::kA: return "A";
        case VariantName::kB: return "B";
        case VariantName::kC: return "C";
        case VariantName::kD: return "D";
        case VariantName::kEMinus: return "E-";
        case VariantName::kE: return "E";
        case VariantName::kBPlus: return "B+";
        case VariantName::kOurs: return "OURS";
    }
    return "?";
}

std::string loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::kRegional: return "regional";
        case LossKind::kGlobal: return "global";
        case LossKind::kGlobalHM: return "global_hm";
    }
    return "?";
}

const Tensor& PairSet::target(int pair) const {
    check_config(pair >= 0 && pair < n_pairs(), "PairSet: pair index out of range");
    return passes[static_cast<size_t>(pair / 3)].target[static_cast<size_t>(pair % 3)];
}

const Tensor& PairSet::recon(int pair) const {
    check_config(pair >= 0 && pair < n_pairs(), "PairSet: pair index out of range");
    return passes[static_cast<size_t>(pair / 3)].recon[static_cast<size_t>(pair % 3)];
}

ModelGraph::ModelGraph(const ConfigVariant& variant, BackboneId backbone, uint64_t seed,
                       BnPolicy encoder_policy)
    : variant_(variant), backbone_(backbone), encoder_policy_(encoder_policy) {
    auto bundle = build_bundle(backbone, seed);
    encoder_ = std::move(bundle.encoder);
    bottleneck_ = std::move(bundle.bottleneck);
    decoder_ = std::move(bundle.decoder);
    if (variant_.paired_encoders) {
        frozen_ = std::make_unique<Encoder>(backbone);
        copy_module(*frozen_, encoder_);
    }
}

Encoder& ModelGraph::frozen_encoder() {
    check_config(frozen_ != nullptr,
                 "frozen_encoder: variant " + variant_name(variant_.name) + " is unpaired");
    return *frozen_;
}

uint64_t ModelGraph::frozen_checksum() { return param_checksum(frozen_encoder()); }

PairSet ModelGraph::forward(const Tensor& images, bool train) {
    // Newly initialized modules always normalize with batch statistics while
    // training; the trainable encoder follows the configured policy. An
    // encoder outside the optimizer set acts as a fixed feature extractor, so
    // it always runs on its stored statistics, as does the frozen copy.
    const nn::BnMode new_mode = train ? nn::BnMode::kBatch : nn::BnMode::kRunning;
    const bool encoder_trains = train && variant_.optimize_encoder;
    const nn::BnMode enc_mode =
        encoder_trains ? bn_mode_for(encoder_policy_) : nn::BnMode::kRunning;

    last_batch_ = images.dim(0);
    PairSet ps;
    if (!variant_.paired_encoders) {
        auto p = encoder_.forward(images, enc_mode, encoder_trains);
        auto latent = bottleneck_.forward(p, new_mode, train);
        auto d = decoder_.forward(latent, new_mode, train);
        ps.passes.push_back({std::move(p), std::move(d)});
        return ps;
    }

    auto pt = encoder_.forward(images, enc_mode, encoder_trains);
    auto pf = frozen_->forward(images, nn::BnMode::kRunning, false);
    Pyramid cat;
    cat.reserve(pt.size());
    for (size_t k = 0; k < pt.size(); ++k) cat.push_back(concat_batch(pt[k], pf[k]));
    auto latent = bottleneck_.forward(cat, new_mode, train);
    auto dcat = decoder_.forward(latent, new_mode, train);

    const int n = images.dim(0);
    Pyramid d_from_trainable, d_from_frozen;
    for (auto& s : dcat) {
        d_from_trainable.push_back(slice_batch(s, 0, n));
        d_from_frozen.push_back(slice_batch(s, n, n));
    }
    // Cross-reconstruction: each reconstruction is judged against the *other*
    // encoder's features.
    ps.passes.push_back({std::move(pf), std::move(d_from_trainable)});
    ps.passes.push_back({std::move(pt), std::move(d_from_frozen)});
    return ps;
}

void ModelGraph::backward(const std::vector<PassGrads>& grads) {
    const size_t want = variant_.paired_encoders ? 2u : 1u;
    check_config(grads.size() == want,
                 "ModelGraph::backward: expected " + std::to_string(want) + " pass grads, got " +
                     std::to_string(grads.size()));

    if (!variant_.paired_encoders) {
        const PassGrads& g = grads[0];
        auto glatent = decoder_.backward(g.grad_recon);
        auto gstages = bottleneck_.backward(glatent);
        if (!variant_.optimize_encoder) return;
        if (!g.grad_target.empty()) add_pyramid(gstages, g.grad_target, "ModelGraph::backward");
        encoder_.backward(gstages);
        return;
    }

    // Reassemble the concatenated decoder-output gradient: rows [0, N) came
    // from the trainable encoder's input, rows [N, 2N) from the frozen one's.
    Pyramid gout;
    for (size_t k = 0; k < grads[0].grad_recon.size(); ++k)
        gout.push_back(concat_batch(grads[0].grad_recon[k], grads[1].grad_recon[k]));
    auto glatent = decoder_.backward(gout);
    auto gcat = bottleneck_.backward(glatent);
    if (!variant_.optimize_encoder) return;
    Pyramid gt;
    for (auto& s : gcat) gt.push_back(slice_batch(s, 0, last_batch_));
    // Pass 2 targets are the trainable encoder's own stages; that path exists
    // only when the variant does not stop-grad its targets.
    if (!grads[1].grad_target.empty())
        add_pyramid(gt, grads[1].grad_target, "ModelGraph::backward");
    encoder_.backward(gt);
}

ParamGroups ModelGraph::trainable_parameters() {
    ParamGroups g;
    bottleneck_.collect("bottleneck", g.new_params);
    decoder_.collect("decoder", g.new_params);
    if (variant_.optimize_encoder) encoder_.collect("encoder", g.pretrained_params);
    return g;
}

void ModelGraph::collect_state(std::vector<nn::ParamRef>& params,
                               std::vector<nn::BufRef>& buffers) {
    encoder_.collect("encoder", params);
    bottleneck_.collect("bottleneck", params);
    decoder_.collect("decoder", params);
    encoder_.collect_buffers("encoder", buffers);
    bottleneck_.collect_buffers("bottleneck", buffers);
    decoder_.collect_buffers("decoder", buffers);
    if (frozen_) {
        frozen_->collect("encoder_frozen", params);
        frozen_->collect_buffers("encoder_frozen", buffers);
    }
}

}  // namespace fcad
