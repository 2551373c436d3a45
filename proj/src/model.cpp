#include "dsrnet/model.hpp"

#include <cmath>

#include "dsrnet/errors.hpp"
#include "dsrnet/image_ops.hpp"

namespace dsrnet {

Encoder encoder_from_string(const std::string& s) {
    if (s == "dsfnet") return Encoder::Dsfnet;
    if (s == "hypercolumn") return Encoder::Hypercolumn;
    if (s == "off" || s == "none") return Encoder::None;
    throw ConfigError("unknown encoder mode: " + s);
}

std::string to_string(Encoder e) {
    switch (e) {
        case Encoder::Dsfnet: return "dsfnet";
        case Encoder::Hypercolumn: return "hypercolumn";
        default: return "off";
    }
}

void ModelConfig::validate() const {
    if (base_width < 2 || base_width % 2 != 0)
        throw ConfigError("base_width must be even and >= 2, got " + std::to_string(base_width));
    if (backbone_width < 1) throw ConfigError("backbone_width must be positive");
    if (dsd_levels < 2 || dsd_levels > 5) throw ConfigError("dsd_levels must lie in [2,5]");
    if (dsd_blocks_per_level < 1) throw ConfigError("dsd_blocks_per_level must be >= 1");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"base_width", base_width},
            {"dsd_levels", dsd_levels},
            {"dsd_blocks_per_level", dsd_blocks_per_level},
            {"interaction", dsrnet::to_string(interaction)},
            {"encoder", dsrnet::to_string(encoder)},
            {"tied_streams", tied_streams},
            {"with_lrm", with_lrm},
            {"backbone_width", backbone_width}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.base_width = j.value("base_width", int64_t{64});
    cfg.dsd_levels = j.value("dsd_levels", int64_t{3});
    cfg.dsd_blocks_per_level = j.value("dsd_blocks_per_level", int64_t{2});
    cfg.interaction = interaction_from_string(j.value("interaction", std::string("mugi")));
    cfg.encoder = encoder_from_string(j.value("encoder", std::string("dsfnet")));
    cfg.tied_streams = j.value("tied_streams", false);
    cfg.with_lrm = j.value("with_lrm", true);
    cfg.backbone_width = j.value("backbone_width", int64_t{64});
    cfg.validate();
    return cfg;
}

void Decomposition::validate() const {
    require_same_shape(transmission, reflection, "decomposition");
    require_same_shape(transmission, residue, "decomposition");
    for (int64_t i = 0; i < residue.numel(); ++i)
        if (!(std::fabs(residue[i]) < 1.0))
            throw DomainError("decomposition: residue must lie strictly inside (-1,1)");
}

DsrNet::DsrNet(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int64_t w = cfg_.base_width;
    const Interaction inter = cfg_.interaction;
    const bool tied = cfg_.tied_streams;

    if (cfg_.encoder == Encoder::Dsfnet) {
        tap_widths_ = {cfg_.backbone_width, 2 * cfg_.backbone_width, 4 * cfg_.backbone_width,
                       8 * cfg_.backbone_width, 8 * cfg_.backbone_width};
        for (size_t k = 0; k < tap_widths_.size(); ++k)
            tap_blocks_.emplace_back("dsf.tap" + std::to_string(k), tap_widths_[k], inter, tied);
        // bottom-up fusion: scale k+1 (deep) into scale k (shallow)
        for (int k = 3; k >= 0; --k) {
            const int64_t deep_w = k == 3 ? tap_widths_[4] : tap_widths_[static_cast<size_t>(k) + 1];
            dsf_blocks_.emplace_back("dsf.fuse" + std::to_string(k), deep_w,
                                     tap_widths_[static_cast<size_t>(k)],
                                     tap_widths_[static_cast<size_t>(k)], tied);
            post_blocks_.emplace_back("dsf.post" + std::to_string(k),
                                      tap_widths_[static_cast<size_t>(k)], inter, tied);
        }
        top_block_.emplace("dsf.top.block", w, inter, tied);
    }

    const int64_t levels = cfg_.dsd_levels;
    enc_blocks_.resize(static_cast<size_t>(levels - 1));
    dec_blocks_.resize(static_cast<size_t>(levels - 1));
    for (int64_t lvl = 0; lvl < levels - 1; ++lvl) {
        const int64_t lw = w << lvl;
        for (int64_t b = 0; b < cfg_.dsd_blocks_per_level; ++b) {
            enc_blocks_[static_cast<size_t>(lvl)].emplace_back(
                "dsd.enc" + std::to_string(lvl) + ".b" + std::to_string(b), lw, inter, tied);
            dec_blocks_[static_cast<size_t>(lvl)].emplace_back(
                "dsd.dec" + std::to_string(lvl) + ".b" + std::to_string(b), lw, inter, tied);
        }
    }
    for (int64_t b = 0; b < cfg_.dsd_blocks_per_level; ++b)
        bottom_blocks_.emplace_back("dsd.bottom.b" + std::to_string(b), w << (levels - 1), inter,
                                    tied);
    final_block_.emplace("dsd.final", w, inter, tied);
    if (cfg_.with_lrm) lrm_block_.emplace("lrm.block", w, inter, tied);
}

ParamStore DsrNet::init_params(uint64_t seed) const {
    ParamStore ps;
    Rng rng(seed);
    const int64_t w = cfg_.base_width;

    if (cfg_.encoder != Encoder::Hypercolumn) {
        ps.add("stem.c1.w", init_conv_kernel(rng, w, 3, 3, 3));
        ps.add("stem.c1.b", Tensor::zeros({w}));
        ps.add("stem.c2.w", init_conv_kernel(rng, w, w, 3, 3));
        ps.add("stem.c2.b", Tensor::zeros({w}));
    }

    if (cfg_.encoder == Encoder::Dsfnet) {
        for (const auto& b : tap_blocks_) b.init_params(ps, rng);
        for (size_t k = 0; k < dsf_blocks_.size(); ++k) {
            dsf_blocks_[k].init_params(ps, rng);
            post_blocks_[k].init_params(ps, rng);
        }
        add_stream_conv(ps, rng, "dsf.top.fuse", w, tap_widths_[0] + w, 1, 1, cfg_.tied_streams);
        top_block_->init_params(ps, rng);
    } else if (cfg_.encoder == Encoder::Hypercolumn) {
        int64_t cin = 3;
        for (int64_t k = 0; k < 5; ++k)
            cin += (k < 2 ? (int64_t{1} << k) : (k < 4 ? (int64_t{1} << k) : 8)) *
                   cfg_.backbone_width;
        ps.add("hyper.proj.w", init_conv_kernel(rng, w, cin, 1, 1));
        ps.add("hyper.proj.b", Tensor::zeros({w}));
    }

    const int64_t levels = cfg_.dsd_levels;
    for (int64_t lvl = 0; lvl < levels - 1; ++lvl) {
        const int64_t lw = w << lvl;
        for (const auto& b : enc_blocks_[static_cast<size_t>(lvl)]) b.init_params(ps, rng);
        add_stream_conv(ps, rng, "dsd.down" + std::to_string(lvl), 2 * lw, lw, 3, 3,
                        cfg_.tied_streams);
    }
    for (const auto& b : bottom_blocks_) b.init_params(ps, rng);
    for (int64_t lvl = levels - 2; lvl >= 0; --lvl) {
        const int64_t lw = w << lvl;
        add_stream_conv(ps, rng, "dsd.up" + std::to_string(lvl), lw, 2 * lw, 3, 3,
                        cfg_.tied_streams);
        add_stream_conv(ps, rng, "dsd.skip" + std::to_string(lvl), lw, 2 * lw, 1, 1,
                        cfg_.tied_streams);
        for (const auto& b : dec_blocks_[static_cast<size_t>(lvl)]) b.init_params(ps, rng);
    }
    final_block_->init_params(ps, rng);
    add_stream_conv(ps, rng, "head", 3, w, 3, 3, cfg_.tied_streams);

    if (cfg_.with_lrm) {
        lrm_block_->init_params(ps, rng);
        ps.add("lrm.fuse1.w", init_conv_kernel(rng, w, 2 * w, 3, 3));
        ps.add("lrm.fuse1.b", Tensor::zeros({w}));
        ps.add("lrm.fuse2.w", init_conv_kernel(rng, 3, w, 3, 3));
        ps.add("lrm.fuse2.b", Tensor::zeros({3}));
    }
    return ps;
}

Var DsrNet::rgb_stem(const Var& image, const BoundParams& bp) const {
    Var s = conv2d(image, bp.at("stem.c1.w"), bp.at("stem.c1.b"), 1, 1, 1);
    s = silu(s);
    return conv2d(s, bp.at("stem.c2.w"), bp.at("stem.c2.b"), 1, 1, 1);
}

FeaturePairVar DsrNet::dsfnet_forward(const Var& image, const std::vector<Var>& feats,
                                      const BoundParams& bp) const {
    if (cfg_.encoder != Encoder::Dsfnet)
        throw ConfigError("dsfnet_forward: model configured without the pyramid encoder");
    if (feats.size() != 5) throw ShapeError("dsfnet_forward: expected 5 backbone feature grids");
    for (size_t k = 0; k < 5; ++k) {
        if (feats[k]->value.dim(0) != tap_widths_[k])
            throw ShapeError("dsfnet_forward: tap " + std::to_string(k) + " has width " +
                             std::to_string(feats[k]->value.dim(0)) + ", expected " +
                             std::to_string(tap_widths_[k]));
        const int64_t stride = int64_t{1} << k;
        if (feats[k]->value.dim(1) * stride != image->value.dim(1) ||
            feats[k]->value.dim(2) * stride != image->value.dim(2))
            throw ShapeError("dsfnet_forward: tap " + std::to_string(k) +
                             " inconsistent with image size");
    }

    // per-scale interaction with F_T = F_R
    std::vector<FeaturePairVar> pairs;
    pairs.reserve(5);
    for (size_t k = 0; k < 5; ++k)
        pairs.push_back(tap_blocks_[k].forward({feats[k], feats[k]}, bp));

    // bottom-up fusion toward full resolution
    FeaturePairVar cur = pairs[4];
    for (size_t i = 0; i < dsf_blocks_.size(); ++i) {
        const size_t scale = 3 - i;
        cur = dsf_blocks_[i].forward(cur, pairs[scale], bp);
        cur = post_blocks_[i].forward(cur, bp);
    }

    // fine-grained RGB details join at the top
    Var stem = rgb_stem(image, bp);
    Var top_t = stream_conv(concat_channels({cur.t, stem}), bp, "dsf.top.fuse", "t", 1, 0);
    Var top_r = stream_conv(concat_channels({cur.r, stem}), bp, "dsf.top.fuse", "r", 1, 0);
    return top_block_->forward({top_t, top_r}, bp);
}

std::tuple<FeaturePairVar, FeaturePairVar, std::pair<Var, Var>>
DsrNet::dsdnet_forward(const FeaturePairVar& pair, const BoundParams& bp) const {
    require_same_shape(pair.t->value, pair.r->value, "dsdnet_forward");
    if (pair.t->value.dim(0) != cfg_.base_width)
        throw ShapeError("dsdnet_forward: expected width " + std::to_string(cfg_.base_width) +
                         ", got " + std::to_string(pair.t->value.dim(0)));
    const int64_t levels = cfg_.dsd_levels;
    const int64_t div = int64_t{1} << (levels - 1);
    if (pair.t->value.dim(1) % div != 0 || pair.t->value.dim(2) % div != 0)
        throw ShapeError("dsdnet_forward: spatial size must be divisible by " +
                         std::to_string(div));

    FeaturePairVar cur = pair;
    std::vector<FeaturePairVar> skips;
    for (int64_t lvl = 0; lvl < levels - 1; ++lvl) {
        for (const auto& b : enc_blocks_[static_cast<size_t>(lvl)]) cur = b.forward(cur, bp);
        skips.push_back(cur);
        const std::string down = "dsd.down" + std::to_string(lvl);
        cur = {stream_conv(cur.t, bp, down, "t", 2, 1), stream_conv(cur.r, bp, down, "r", 2, 1)};
    }
    for (const auto& b : bottom_blocks_) cur = b.forward(cur, bp);
    for (int64_t lvl = levels - 2; lvl >= 0; --lvl) {
        const std::string up = "dsd.up" + std::to_string(lvl);
        cur = {stream_conv(upsample_nearest2(cur.t), bp, up, "t", 1, 1),
               stream_conv(upsample_nearest2(cur.r), bp, up, "r", 1, 1)};
        const auto& skip = skips[static_cast<size_t>(lvl)];
        const std::string fuse = "dsd.skip" + std::to_string(lvl);
        cur = {stream_conv(concat_channels({cur.t, skip.t}), bp, fuse, "t", 1, 0),
               stream_conv(concat_channels({cur.r, skip.r}), bp, fuse, "r", 1, 0)};
        for (const auto& b : dec_blocks_[static_cast<size_t>(lvl)]) cur = b.forward(cur, bp);
    }

    FeaturePairVar refined = cur;
    FeaturePairVar prefinal = final_block_->forward(refined, bp);
    Var t_pred = stream_conv(prefinal.t, bp, "head", "t", 1, 1);
    Var r_pred = stream_conv(prefinal.r, bp, "head", "r", 1, 1);
    return {refined, prefinal, {t_pred, r_pred}};
}

Var DsrNet::lrm_forward(const FeaturePairVar& prefinal, const BoundParams& bp) const {
    if (!cfg_.with_lrm) throw ConfigError("lrm_forward: model configured without the residue module");
    FeaturePairVar inter = lrm_block_->forward(prefinal, bp);
    Var fused = concat_channels({inter.t, inter.r});
    fused = conv2d(fused, bp.at("lrm.fuse1.w"), bp.at("lrm.fuse1.b"), 1, 1, 1);
    fused = silu(fused);
    fused = conv2d(fused, bp.at("lrm.fuse2.w"), bp.at("lrm.fuse2.b"), 1, 1, 1);
    return tanh_of(fused);
}

FeaturePairVar DsrNet::encode(const Var& image, const std::vector<Var>& feats,
                              const BoundParams& bp) const {
    switch (cfg_.encoder) {
        case Encoder::Dsfnet: return dsfnet_forward(image, feats, bp);
        case Encoder::Hypercolumn: {
            std::vector<Var> cat{image};
            for (size_t k = 0; k < feats.size(); ++k) {
                Var up = feats[k];
                for (size_t n = 0; n < k; ++n) up = upsample_nearest2(up);
                cat.push_back(up);
            }
            Var h = conv2d(concat_channels(cat), bp.at("hyper.proj.w"), bp.at("hyper.proj.b"), 1,
                           0, 1);
            return {h, h};
        }
        default: {
            Var s = rgb_stem(image, bp);
            return {s, s};
        }
    }
}

ForwardOutputs DsrNet::forward(const Tensor& image, const VggBackbone* backbone,
                               const BoundParams& bp, bool with_residue,
                               const std::vector<Tensor>* cached_feats) const {
    if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("forward: image must be (3,H,W)");
    if (image.dim(1) % 16 != 0 || image.dim(2) % 16 != 0)
        throw ShapeError("forward: image size " + image.shape_str() +
                         " must be divisible by 16 (see infer for padding)");
    Var img = constant(image);

    std::vector<Var> feats;
    if (cfg_.encoder != Encoder::None) {
        if (cached_feats) {
            if (cached_feats->size() != 5)
                throw ShapeError("forward: cached features must hold 5 grids");
            for (const auto& f : *cached_feats) feats.push_back(constant(f));
        } else {
            if (!backbone) throw ResourceError("forward: encoder requires backbone weights");
            feats = backbone->forward_taps(img, VggBackbone::stage_end_taps());
        }
    }

    FeaturePairVar encoded = encode(img, feats, bp);
    auto [refined, prefinal, heads] = dsdnet_forward(encoded, bp);
    ForwardOutputs out;
    out.t_pred = heads.first;
    out.r_pred = heads.second;
    out.refined = refined;
    out.prefinal = prefinal;
    if (with_residue) {
        if (!cfg_.with_lrm)
            throw ConfigError("forward: residue requested but model built without the module");
        out.residue = lrm_forward(prefinal, bp);
    }
    return out;
}

Decomposition DsrNet::infer(const Tensor& image, const VggBackbone* backbone,
                            const ParamStore& ps, bool with_residue) const {
    int64_t pad_h = 0, pad_w = 0;
    Tensor padded = pad_reflect_to_multiple(image, 16, pad_h, pad_w);
    BoundParams bp(ps);
    ForwardOutputs fw = forward(padded, backbone, bp, with_residue);
    const int64_t h = image.dim(1), w = image.dim(2);
    Decomposition d;
    d.transmission = clamp01(crop(fw.t_pred->value, 0, 0, h, w));
    d.reflection = clamp01(crop(fw.r_pred->value, 0, 0, h, w));
    d.residue = with_residue ? crop(fw.residue->value, 0, 0, h, w) : Tensor::zeros({3, h, w});
    return d;
}

ParamStore init_model_params(const ModelConfig& cfg, uint64_t seed) {
    return DsrNet(cfg).init_params(seed);
}

std::vector<Tensor> extract_backbone_features(const Tensor& image, const VggBackbone& backbone) {
    return backbone.extract_features(image);
}

} // namespace dsrnet
