#include "fcad/backbone.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace fcad {

BackboneId parse_backbone_id(const std::string& name) {
    if (name == "resnet18") return BackboneId::kSmall18;
    if (name == "resnet50") return BackboneId::kMedium50;
    if (name == "wide_resnet50") return BackboneId::kWide50;
    throw ConfigError("unknown backbone '" + name +
                      "'; expected one of: resnet18, resnet50, wide_resnet50");
}

std::string backbone_name(BackboneId id) {
    switch (id) {
        case BackboneId::kSmall18: return "resnet18";
        case BackboneId::kMedium50: return "resnet50";
        case BackboneId::kWide50: return "wide_resnet50";
    }
    throw ConfigError("invalid backbone id");
}

BnPolicy parse_bn_policy(const std::string& name) {
    if (name == "train") return BnPolicy::kTrainMode;
    if (name == "eval") return BnPolicy::kEvalMode;
    if (name == "var_substitute") return BnPolicy::kVarSubstitute;
    throw ConfigError("unknown bn_policy '" + name + "'; expected train, eval, or var_substitute");
}

std::string bn_policy_name(BnPolicy p) {
    switch (p) {
        case BnPolicy::kTrainMode: return "train";
        case BnPolicy::kEvalMode: return "eval";
        case BnPolicy::kVarSubstitute: return "var_substitute";
    }
    throw ConfigError("invalid bn policy");
}

nn::BnMode bn_mode_for(BnPolicy p) {
    switch (p) {
        case BnPolicy::kTrainMode: return nn::BnMode::kBatch;
        case BnPolicy::kEvalMode: return nn::BnMode::kRunning;
        case BnPolicy::kVarSubstitute: return nn::BnMode::kBatchVarFloor;
    }
    throw ConfigError("invalid bn policy");
}

BackboneSpec backbone_spec(BackboneId id) {
    switch (id) {
        case BackboneId::kSmall18:
            return {nn::BlockKind::kBasic, nn::BlockKind::kUpBasic, 1, {2, 2, 2}, {64, 128, 256}, 512};
        case BackboneId::kMedium50:
            return {nn::BlockKind::kBottleneck, nn::BlockKind::kUpBottleneck, 1,
                    {3, 4, 6}, {256, 512, 1024}, 2048};
        case BackboneId::kWide50:
            return {nn::BlockKind::kBottleneck, nn::BlockKind::kUpBottleneck, 2,
                    {3, 4, 6}, {256, 512, 1024}, 2048};
    }
    throw ConfigError("invalid backbone id");
}

// --- Encoder -----------------------------------------------------------------

Encoder::Encoder(BackboneId id)
    : id_(id), stem_conv_(3, 64, 7, 2, 3), stem_bn_(64) {
    const auto spec = backbone_spec(id);
    const int planes[3] = {64, 128, 256};
    int ch = 64;
    for (int s = 0; s < 3; ++s) {
        const int stride = s == 0 ? 1 : 2;
        layers_[s] = nn::make_stage<float>(spec.encoder_block, ch, planes[s], spec.counts[s],
                                           stride, spec.width_factor);
        ch = layers_[s].back()->out_channels();
    }
}

Pyramid Encoder::forward(const Tensor& x, nn::BnMode mode, bool train) {
    check_shape(x.rank() == 4 && x.dim(1) == 3,
                "encoder: expected (N,3,H,W) input, got " + x.shape_str());
    check_shape(x.dim(2) % 32 == 0 && x.dim(3) % 32 == 0 && x.dim(2) >= 32,
                "encoder: input spatial size must be a positive multiple of 32, got " + x.shape_str());
    auto t = stem_pool_.forward(
        stem_relu_.forward(stem_bn_.forward(stem_conv_.forward(x, train), mode, train), train), train);
    Pyramid out;
    for (int s = 0; s < 3; ++s) {
        for (auto& b : layers_[s]) t = b->forward(t, mode, train);
        out.push_back(t);
    }
    return out;
}

void Encoder::backward(const Pyramid& gstages) {
    check_shape(gstages.size() == 3, "encoder backward: expected 3 stage gradients");
    Tensor g = gstages[2];
    for (int s = 2; s >= 0; --s) {
        for (auto it = layers_[s].rbegin(); it != layers_[s].rend(); ++it) g = (*it)->backward(g);
        if (s > 0) nn::detail::add_inplace(g, gstages[s - 1]);
    }
    stem_conv_.backward(stem_bn_.backward(stem_relu_.backward(stem_pool_.backward(g))));
}

void Encoder::init(Rng& rng) {
    stem_conv_.init(rng);
    for (auto& stage : layers_)
        for (auto& b : stage) b->init(rng);
}

void Encoder::collect(const std::string& prefix, std::vector<nn::ParamRef>& out) {
    stem_conv_.collect(prefix + ".conv1", out);
    stem_bn_.collect(prefix + ".bn1", out);
    for (int s = 0; s < 3; ++s)
        for (size_t i = 0; i < layers_[s].size(); ++i)
            layers_[s][i]->collect(prefix + ".layer" + std::to_string(s + 1) + "." + std::to_string(i), out);
}

void Encoder::collect_buffers(const std::string& prefix, std::vector<nn::BufRef>& out) {
    stem_bn_.collect_buffers(prefix + ".bn1", out);
    for (int s = 0; s < 3; ++s)
        for (size_t i = 0; i < layers_[s].size(); ++i)
            layers_[s][i]->collect_buffers(prefix + ".layer" + std::to_string(s + 1) + "." + std::to_string(i),
                                           out);
}

// --- FusionBottleneck ----------------------------------------------------------

namespace {

Tensor concat_channels(const Tensor& a, const Tensor& b, const Tensor& c) {
    check_shape(a.dim(0) == b.dim(0) && b.dim(0) == c.dim(0) && a.dim(2) == b.dim(2) &&
                    b.dim(2) == c.dim(2) && a.dim(3) == b.dim(3) && b.dim(3) == c.dim(3),
                "channel concat: incompatible shapes " + a.shape_str() + ", " + b.shape_str() + ", " +
                    c.shape_str());
    const int n = a.dim(0), h = a.dim(2), w = a.dim(3);
    const int ca = a.dim(1), cb = b.dim(1), cc = c.dim(1);
    Tensor out({n, ca + cb + cc, h, w});
    const size_t plane = static_cast<size_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        std::memcpy(&out.at(i, 0, 0, 0), &a.at(i, 0, 0, 0), sizeof(float) * plane * ca);
        std::memcpy(&out.at(i, ca, 0, 0), &b.at(i, 0, 0, 0), sizeof(float) * plane * cb);
        std::memcpy(&out.at(i, ca + cb, 0, 0), &c.at(i, 0, 0, 0), sizeof(float) * plane * cc);
    }
    return out;
}

void split_channels(const Tensor& g, Tensor& ga, Tensor& gb, Tensor& gc) {
    const int n = g.dim(0), h = g.dim(2), w = g.dim(3);
    const int ca = ga.dim(1), cb = gb.dim(1), cc = gc.dim(1);
    const size_t plane = static_cast<size_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        std::memcpy(&ga.at(i, 0, 0, 0), &g.at(i, 0, 0, 0), sizeof(float) * plane * ca);
        std::memcpy(&gb.at(i, 0, 0, 0), &g.at(i, ca, 0, 0), sizeof(float) * plane * cb);
        std::memcpy(&gc.at(i, 0, 0, 0), &g.at(i, ca + cb, 0, 0), sizeof(float) * plane * cc);
    }
}

}  // namespace

FusionBottleneck::FusionBottleneck(BackboneId id) {
    const auto spec = backbone_spec(id);
    channels_ = spec.channels;
    const int c1 = channels_[0], c2 = channels_[1], c3 = channels_[2];
    f1_conv1_ = nn::Conv2d(c1, 2 * c1, 3, 2, 1);
    f1_bn1_ = nn::BatchNorm2d(2 * c1);
    f1_conv2_ = nn::Conv2d(2 * c1, c3, 3, 2, 1);
    f1_bn2_ = nn::BatchNorm2d(c3);
    f2_conv1_ = nn::Conv2d(c2, c3, 3, 2, 1);
    f2_bn1_ = nn::BatchNorm2d(c3);
    auto blocks = nn::make_stage<float>(spec.encoder_block, 3 * c3, 512, 1, 2, spec.width_factor);
    block_ = std::move(blocks.front());
}

Tensor FusionBottleneck::forward(const Pyramid& p, nn::BnMode mode, bool train) {
    check_shape(p.size() == 3, "bottleneck: expected a 3-stage pyramid, got " +
                                   std::to_string(p.size()) + " stages");
    for (int k = 0; k < 3; ++k)
        check_shape(p[k].dim(1) == channels_[k],
                    "bottleneck: stage " + std::to_string(k + 1) + " has " + std::to_string(p[k].dim(1)) +
                        " channels, expected " + std::to_string(channels_[k]));
    check_shape(p[0].dim(2) == 2 * p[1].dim(2) && p[1].dim(2) == 2 * p[2].dim(2),
                "bottleneck: pyramid strides must double stage to stage");

    auto a = f1_relu1_.forward(f1_bn1_.forward(f1_conv1_.forward(p[0], train), mode, train), train);
    a = f1_relu2_.forward(f1_bn2_.forward(f1_conv2_.forward(a, train), mode, train), train);
    auto b = f2_relu1_.forward(f2_bn1_.forward(f2_conv1_.forward(p[1], train), mode, train), train);
    return block_->forward(concat_channels(a, b, p[2]), mode, train);
}

Pyramid FusionBottleneck::backward(const Tensor& glatent) {
    auto gcat = block_->backward(glatent);
    const int n = gcat.dim(0), h = gcat.dim(2), w = gcat.dim(3);
    const int c3 = channels_[2];
    Tensor ga({n, c3, h, w}), gb({n, c3, h, w}), gc({n, c3, h, w});
    split_channels(gcat, ga, gb, gc);
    auto g1 = f1_conv1_.backward(f1_bn1_.backward(f1_relu1_.backward(
        f1_conv2_.backward(f1_bn2_.backward(f1_relu2_.backward(ga))))));
    auto g2 = f2_conv1_.backward(f2_bn1_.backward(f2_relu1_.backward(gb)));
    return {std::move(g1), std::move(g2), std::move(gc)};
}

void FusionBottleneck::init(Rng& rng) {
    f1_conv1_.init(rng);
    f1_conv2_.init(rng);
    f2_conv1_.init(rng);
    block_->init(rng);
}

void FusionBottleneck::collect(const std::string& prefix, std::vector<nn::ParamRef>& out) {
    f1_conv1_.collect(prefix + ".fuse1.conv1", out);
    f1_bn1_.collect(prefix + ".fuse1.bn1", out);
    f1_conv2_.collect(prefix + ".fuse1.conv2", out);
    f1_bn2_.collect(prefix + ".fuse1.bn2", out);
    f2_conv1_.collect(prefix + ".fuse2.conv1", out);
    f2_bn1_.collect(prefix + ".fuse2.bn1", out);
    block_->collect(prefix + ".block", out);
}

void FusionBottleneck::collect_buffers(const std::string& prefix, std::vector<nn::BufRef>& out) {
    f1_bn1_.collect_buffers(prefix + ".fuse1.bn1", out);
    f1_bn2_.collect_buffers(prefix + ".fuse1.bn2", out);
    f2_bn1_.collect_buffers(prefix + ".fuse2.bn1", out);
    block_->collect_buffers(prefix + ".block", out);
}

// --- Decoder -------------------------------------------------------------------

Decoder::Decoder(BackboneId id) {
    const auto spec = backbone_spec(id);
    // Reversed encoder: deepest stage first, block counts mirrored.
    const int planes[3] = {256, 128, 64};
    int ch = spec.latent_channels;
    for (int s = 0; s < 3; ++s) {
        ups_[s] = nn::make_stage<float>(spec.decoder_block, ch, planes[s], spec.counts[2 - s], 2,
                                        spec.width_factor);
        ch = ups_[s].back()->out_channels();
    }
}

Pyramid Decoder::forward(const Tensor& latent, nn::BnMode mode, bool train) {
    Pyramid out(3);
    Tensor t = latent;
    for (int s = 0; s < 3; ++s) {
        for (auto& b : ups_[s]) t = b->forward(t, mode, train);
        out[2 - s] = t;
    }
    return out;
}

Tensor Decoder::backward(const Pyramid& gstages) {
    check_shape(gstages.size() == 3, "decoder backward: expected 3 stage gradients");
    Tensor g = gstages[0];
    for (int s = 2; s >= 0; --s) {
        for (auto it = ups_[s].rbegin(); it != ups_[s].rend(); ++it) g = (*it)->backward(g);
        if (s > 0) nn::detail::add_inplace(g, gstages[3 - s]);
    }
    return g;
}

void Decoder::init(Rng& rng) {
    for (auto& stage : ups_)
        for (auto& b : stage) b->init(rng);
}

void Decoder::collect(const std::string& prefix, std::vector<nn::ParamRef>& out) {
    for (int s = 0; s < 3; ++s)
        for (size_t i = 0; i < ups_[s].size(); ++i)
            ups_[s][i]->collect(prefix + ".up" + std::to_string(3 - s) + "." + std::to_string(i), out);
}

void Decoder::collect_buffers(const std::string& prefix, std::vector<nn::BufRef>& out) {
    for (int s = 0; s < 3; ++s)
        for (size_t i = 0; i < ups_[s].size(); ++i)
            ups_[s][i]->collect_buffers(prefix + ".up" + std::to_string(3 - s) + "." + std::to_string(i), out);
}

// --- bundle ---------------------------------------------------------------------

BackboneBundle build_bundle(BackboneId id, uint64_t seed) {
    BackboneBundle b;
    b.id = id;
    b.encoder = Encoder(id);
    b.bottleneck = FusionBottleneck(id);
    b.decoder = Decoder(id);
    Rng rng(seed);
    b.encoder.init(rng);
    b.bottleneck.init(rng);
    b.decoder.init(rng);
    return b;
}

void zero_grads(std::vector<nn::ParamRef>& params) {
    for (auto& p : params) p.grad->zero();
}

// --- checkpoints -------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'F', 'C', 'A', 'D', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void write_tensor(std::ofstream& f, const std::string& name, const Tensor& t) {
    const auto nlen = static_cast<uint32_t>(name.size());
    f.write(reinterpret_cast<const char*>(&nlen), sizeof(nlen));
    f.write(name.data(), nlen);
    const auto nd = static_cast<uint32_t>(t.shape.size());
    f.write(reinterpret_cast<const char*>(&nd), sizeof(nd));
    for (int d : t.shape) {
        const auto di = static_cast<int32_t>(d);
        f.write(reinterpret_cast<const char*>(&di), sizeof(di));
    }
    f.write(reinterpret_cast<const char*>(t.v.data()),
            static_cast<std::streamsize>(sizeof(float) * t.numel()));
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<nn::ParamRef>& params,
                     const std::vector<nn::BufRef>& buffers, const std::string& meta_json) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint file for writing: " + path);
    f.write(kMagic, sizeof(kMagic));
    f.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
    const auto count = static_cast<uint32_t>(params.size() + buffers.size());
    f.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const auto& p : params) write_tensor(f, p.name, *p.value);
    for (const auto& b : buffers) write_tensor(f, b.name, *b.value);
    if (!f) throw IoError("short write while saving checkpoint: " + path);
    f.close();

    std::ofstream side(path + ".json");
    if (!side) throw IoError("cannot open checkpoint sidecar for writing: " + path + ".json");
    side << (meta_json.empty() ? "{}" : meta_json) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint file: " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("not a checkpoint file (bad magic): " + path);
    uint32_t version = 0, count = 0;
    f.read(reinterpret_cast<char*>(&version), sizeof(version));
    f.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (!f || version != kVersion)
        throw IoError("unsupported checkpoint version in " + path);

    Checkpoint ckpt;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t nlen = 0;
        f.read(reinterpret_cast<char*>(&nlen), sizeof(nlen));
        if (!f || nlen == 0 || nlen > 4096) throw IoError("corrupt checkpoint entry header in " + path);
        std::string name(nlen, '\0');
        f.read(name.data(), nlen);
        uint32_t nd = 0;
        f.read(reinterpret_cast<char*>(&nd), sizeof(nd));
        if (!f || nd == 0 || nd > 8) throw IoError("corrupt tensor rank for '" + name + "' in " + path);
        std::vector<int> shape(nd);
        for (auto& d : shape) {
            int32_t di = 0;
            f.read(reinterpret_cast<char*>(&di), sizeof(di));
            if (!f || di <= 0) throw IoError("corrupt tensor shape for '" + name + "' in " + path);
            d = di;
        }
        Tensor t(shape);
        f.read(reinterpret_cast<char*>(t.v.data()),
               static_cast<std::streamsize>(sizeof(float) * t.numel()));
        if (!f) throw IoError("truncated tensor data for '" + name + "' in " + path);
        ckpt.tensors.emplace(std::move(name), std::move(t));
    }

    std::ifstream side(path + ".json");
    if (side) {
        std::string content((std::istreambuf_iterator<char>(side)), std::istreambuf_iterator<char>());
        ckpt.meta_json = std::move(content);
    }
    return ckpt;
}

void assign_from_checkpoint(const Checkpoint& ckpt, const std::vector<nn::ParamRef>& params,
                            const std::vector<nn::BufRef>& buffers) {
    std::string missing, mismatched;
    auto assign = [&](const std::string& name, Tensor* dst) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end()) {
            missing += (missing.empty() ? "" : ", ") + name;
            return;
        }
        if (!dst->same_shape(it->second)) {
            mismatched += (mismatched.empty() ? "" : ", ") + name;
            return;
        }
        *dst = it->second;
    };
    for (const auto& p : params) assign(p.name, p.value);
    for (const auto& b : buffers) assign(b.name, b.value);
    if (!missing.empty() || !mismatched.empty()) {
        std::string msg = "checkpoint does not match model";
        if (!missing.empty()) msg += "; missing keys: " + missing;
        if (!mismatched.empty()) msg += "; shape mismatches: " + mismatched;
        throw IoError(msg);
    }
}

}  // namespace fcad
