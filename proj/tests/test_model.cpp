#include "doctest.h"

#include <cmath>

#include "dsrnet/losses.hpp"
#include "dsrnet/model.hpp"
#include "testutil.hpp"

using namespace dsrnet;
using testutil::TempDir;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

ModelConfig small_config(int64_t width = 8, int64_t backbone = 8) {
    ModelConfig cfg;
    cfg.base_width = width;
    cfg.backbone_width = backbone;
    return cfg;
}

} // namespace

TEST_CASE("backbone feature extraction: strides, widths, determinism") {
    BackboneConfig bc;
    bc.width = 8;
    VggBackbone backbone = VggBackbone::seeded_random(bc, 1);
    Rng rng(2);
    Tensor img = testutil::procedural_image(rng, 64, 64);

    auto feats = extract_backbone_features(img, backbone);
    REQUIRE(feats.size() == 5);
    const int64_t sizes[5] = {64, 32, 16, 8, 4};
    const int64_t widths[5] = {8, 16, 32, 64, 64};
    for (int k = 0; k < 5; ++k) {
        CHECK(feats[static_cast<size_t>(k)].dim(0) == widths[k]);
        CHECK(feats[static_cast<size_t>(k)].dim(1) == sizes[k]);
        CHECK(feats[static_cast<size_t>(k)].dim(2) == sizes[k]);
    }

    auto again = extract_backbone_features(img, backbone);
    for (int k = 0; k < 5; ++k)
        CHECK(bitwise_equal(feats[static_cast<size_t>(k)], again[static_cast<size_t>(k)]));

    CHECK_THROWS_AS(extract_backbone_features(testutil::procedural_image(rng, 50, 50), backbone),
                    ShapeError);
}

TEST_CASE("backbone weights round-trip through their file format") {
    BackboneConfig bc;
    bc.width = 4;
    VggBackbone backbone = VggBackbone::seeded_random(bc, 7);
    TempDir dir("backbone");
    backbone.save(dir.file("vgg.bin"));
    VggBackbone loaded = VggBackbone::load(dir.file("vgg.bin"));
    Rng rng(8);
    Tensor img = testutil::procedural_image(rng, 32, 32);
    auto a = extract_backbone_features(img, backbone);
    auto b = extract_backbone_features(img, loaded);
    for (size_t k = 0; k < a.size(); ++k) CHECK(bitwise_equal(a[k], b[k]));

    CHECK_THROWS_AS(VggBackbone::load(dir.file("missing.bin")), ResourceError);
}

TEST_CASE("dsfnet produces a full-resolution pair of the configured width") {
    ModelConfig cfg = small_config();
    DsrNet model(cfg);
    ParamStore ps = model.init_params(3);
    BackboneConfig bc;
    bc.width = cfg.backbone_width;
    VggBackbone backbone = VggBackbone::seeded_random(bc, 4);
    Rng rng(5);
    Tensor img = testutil::procedural_image(rng, 64, 64);

    BoundParams bp(ps);
    Var iv = constant(img);
    auto feats = backbone.forward_taps(iv, VggBackbone::stage_end_taps());
    FeaturePairVar pair = model.dsfnet_forward(iv, feats, bp);
    CHECK(pair.t->value.shape() == std::vector<int64_t>{cfg.base_width, 64, 64});
    CHECK(pair.t->value.all_finite());

    // deterministic across rebinds
    BoundParams bp2(ps);
    FeaturePairVar pair2 = model.dsfnet_forward(iv, backbone.forward_taps(iv, VggBackbone::stage_end_taps()), bp2);
    CHECK(bitwise_equal(pair.t->value, pair2.t->value));
    CHECK(bitwise_equal(pair.r->value, pair2.r->value));
}

TEST_CASE("tied parameters make both dsfnet streams identical") {
    ModelConfig cfg = small_config();
    cfg.tied_streams = true;
    DsrNet model(cfg);
    ParamStore ps = model.init_params(11);
    BackboneConfig bc;
    bc.width = cfg.backbone_width;
    VggBackbone backbone = VggBackbone::seeded_random(bc, 12);
    Rng rng(13);
    Tensor img = testutil::procedural_image(rng, 32, 32);
    BoundParams bp(ps);
    Var iv = constant(img);
    FeaturePairVar pair =
        model.dsfnet_forward(iv, backbone.forward_taps(iv, VggBackbone::stage_end_taps()), bp);
    CHECK(bitwise_equal(pair.t->value, pair.r->value));
}

TEST_CASE("dsdnet shapes, zeroed heads, and stream-swap symmetry when tied") {
    ModelConfig cfg = small_config();
    DsrNet model(cfg);
    ParamStore ps = model.init_params(21);
    Rng rng(22);
    FeaturePair in{rng.uniform_tensor({cfg.base_width, 32, 32}, -1.0, 1.0),
                   rng.uniform_tensor({cfg.base_width, 32, 32}, -1.0, 1.0)};

    BoundParams bp(ps);
    auto [refined, prefinal, heads] = model.dsdnet_forward(to_vars(in), bp);
    CHECK(heads.first->value.shape() == std::vector<int64_t>{3, 32, 32});
    CHECK(heads.second->value.shape() == std::vector<int64_t>{3, 32, 32});
    CHECK(prefinal.t->value.dim(0) == cfg.base_width);

    // zeroed output heads with bias b -> constant prediction b
    ParamStore zeroed = ps;
    for (const char* stream : {"t", "r"}) {
        Tensor& w = zeroed.at(std::string("head.") + stream + ".w");
        for (int64_t i = 0; i < w.numel(); ++i) w[i] = 0.0;
        Tensor& b = zeroed.at(std::string("head.") + stream + ".b");
        b[0] = 0.37;
        b[1] = 0.37;
        b[2] = 0.37;
    }
    BoundParams bpz(zeroed);
    auto [r2, p2, h2] = model.dsdnet_forward(to_vars(in), bpz);
    for (int64_t i = 0; i < h2.first->value.numel(); ++i)
        CHECK(h2.first->value[i] == 0.37);

    // width mismatch
    FeaturePair bad{Tensor({cfg.base_width + 2, 32, 32}), Tensor({cfg.base_width + 2, 32, 32})};
    CHECK_THROWS_AS(model.dsdnet_forward(to_vars(bad), bp), ShapeError);

    // tied model maps swapped inputs to swapped outputs
    ModelConfig tied_cfg = small_config();
    tied_cfg.tied_streams = true;
    DsrNet tied(tied_cfg);
    ParamStore tps = tied.init_params(23);
    BoundParams tbp(tps);
    auto [ra, pa, ha] = tied.dsdnet_forward(to_vars(in), tbp);
    auto [rb, pb, hb] = tied.dsdnet_forward(to_vars({in.r, in.t}), tbp);
    CHECK(bitwise_equal(ha.first->value, hb.second->value));
    CHECK(bitwise_equal(ha.second->value, hb.first->value));
}

TEST_CASE("lrm output lies strictly inside (-1,1) and zero fusion gives zero") {
    ModelConfig cfg = small_config();
    DsrNet model(cfg);
    ParamStore ps = model.init_params(31);
    Rng rng(32);
    FeaturePair prefinal{rng.uniform_tensor({cfg.base_width, 16, 16}, -2.0, 2.0),
                         rng.uniform_tensor({cfg.base_width, 16, 16}, -2.0, 2.0)};
    BoundParams bp(ps);
    Var residue = model.lrm_forward(to_vars(prefinal), bp);
    CHECK(residue->value.dim(0) == 3);
    CHECK(residue->value.abs_max() < 1.0);

    ParamStore zeroed = ps;
    Tensor& w2 = zeroed.at("lrm.fuse2.w");
    for (int64_t i = 0; i < w2.numel(); ++i) w2[i] = 0.0;
    Tensor& b2 = zeroed.at("lrm.fuse2.b");
    for (int64_t i = 0; i < b2.numel(); ++i) b2[i] = 0.0;
    BoundParams bpz(zeroed);
    CHECK(model.lrm_forward(to_vars(prefinal), bpz)->value.abs_max() == 0.0); // tanh(0) = 0
}

TEST_CASE("full forward: shape, residue range, detachable residue branch") {
    ModelConfig cfg = small_config();
    DsrNet model(cfg);
    ParamStore ps = model.init_params(41);
    BackboneConfig bc;
    bc.width = cfg.backbone_width;
    VggBackbone backbone = VggBackbone::seeded_random(bc, 42);
    Rng rng(43);
    Tensor img = testutil::procedural_image(rng, 64, 64);

    Decomposition with = model.infer(img, &backbone, ps, true);
    with.validate();
    CHECK(with.transmission.shape() == img.shape());
    CHECK(with.residue.abs_max() < 1.0);
    CHECK(with.residue.abs_max() > 0.0);

    Decomposition without = model.infer(img, &backbone, ps, false);
    CHECK(without.residue.abs_max() == 0.0);
    CHECK(bitwise_equal(with.transmission, without.transmission));
    CHECK(bitwise_equal(with.reflection, without.reflection));

    // determinism across runs
    Decomposition again = model.infer(img, &backbone, ps, true);
    CHECK(bitwise_equal(with.transmission, again.transmission));
    CHECK(bitwise_equal(with.residue, again.residue));

    // arbitrary sizes go through pad-and-crop
    Tensor odd = testutil::procedural_image(rng, 50, 46);
    Decomposition padded = model.infer(odd, &backbone, ps, true);
    CHECK(padded.transmission.shape() == odd.shape());
}

TEST_CASE("tied full model emits identical transmission and reflection") {
    ModelConfig cfg = small_config();
    cfg.tied_streams = true;
    DsrNet model(cfg);
    ParamStore ps = model.init_params(51);
    BackboneConfig bc;
    bc.width = cfg.backbone_width;
    VggBackbone backbone = VggBackbone::seeded_random(bc, 52);
    Rng rng(53);
    Tensor img = testutil::procedural_image(rng, 32, 32);
    Decomposition d = model.infer(img, &backbone, ps, false);
    CHECK(bitwise_equal(d.transmission, d.reflection));
}

TEST_CASE("init_model_params: determinism, tied tensors, odd width rejected") {
    ModelConfig cfg = small_config();
    ParamStore a = init_model_params(cfg, 61);
    ParamStore b = init_model_params(cfg, 61);
    REQUIRE(a.same_layout(b));
    for (size_t i = 0; i < a.items().size(); ++i)
        CHECK(bitwise_equal(a.items()[i].second, b.items()[i].second));

    ModelConfig tied = cfg;
    tied.tied_streams = true;
    ParamStore t = init_model_params(tied, 62);
    for (const auto& [name, tensor] : t.items()) {
        const auto pos = name.find(".t.");
        if (pos == std::string::npos) continue;
        std::string sibling = name;
        sibling.replace(pos, 3, ".r.");
        if (t.has(sibling)) CHECK(bitwise_equal(tensor, t.at(sibling)));
    }

    ModelConfig odd = cfg;
    odd.base_width = 6;
    CHECK_NOTHROW(init_model_params(odd, 63));
    odd.base_width = 5;
    CHECK_THROWS_AS(init_model_params(odd, 63), ConfigError);
}

TEST_CASE("ablation encoders keep the forward contract") {
    Rng rng(71);
    Tensor img = testutil::procedural_image(rng, 32, 32);
    BackboneConfig bc;
    bc.width = 8;
    VggBackbone backbone = VggBackbone::seeded_random(bc, 72);

    for (Encoder enc : {Encoder::Hypercolumn, Encoder::None}) {
        ModelConfig cfg = small_config();
        cfg.encoder = enc;
        DsrNet model(cfg);
        ParamStore ps = model.init_params(73);
        Decomposition d =
            model.infer(img, enc == Encoder::None ? nullptr : &backbone, ps, true);
        d.validate();
        CHECK(d.transmission.shape() == img.shape());
    }
    for (Interaction inter : {Interaction::None, Interaction::Ytmt}) {
        ModelConfig cfg = small_config();
        cfg.interaction = inter;
        DsrNet model(cfg);
        ParamStore ps = model.init_params(74);
        Decomposition d = model.infer(img, &backbone, ps, true);
        d.validate();
    }
}

TEST_CASE("sampled end-to-end parameter gradients match finite differences") {
    ModelConfig cfg = small_config(8, 4);
    DsrNet model(cfg);
    ParamStore ps = model.init_params(81);
    BackboneConfig bc;
    bc.width = cfg.backbone_width;
    VggBackbone backbone = VggBackbone::seeded_random(bc, 82);
    Rng rng(83);
    Tensor img = testutil::procedural_image(rng, 32, 32);
    Tensor gt_t = testutil::procedural_image(rng, 32, 32);
    Tensor gt_r = testutil::procedural_image(rng, 32, 32);
    LossWeights weights;

    auto objective = [&](const ParamStore& store) {
        BoundParams bp(store);
        ForwardOutputs fw = model.forward(img, &backbone, bp, true);
        return total_loss(constant(img), fw.t_pred, fw.r_pred, fw.residue, constant(gt_t),
                          constant(gt_r), weights, &backbone)
            .total->value[0];
    };

    BoundParams bp(ps);
    ForwardOutputs fw = model.forward(img, &backbone, bp, true);
    TotalLoss loss = total_loss(constant(img), fw.t_pred, fw.r_pred, fw.residue, constant(gt_t),
                                constant(gt_r), weights, &backbone);
    backward(loss.total);

    // a few parameters spread across the components (acceptance covers >= 20)
    Rng pick(84);
    ParamStore probe = ps;
    int checked = 0;
    const double h = 1e-4;
    for (const char* prefix : {"dsf.", "dsd.", "lrm.", "stem.", "head."}) {
        std::vector<size_t> candidates;
        for (size_t i = 0; i < ps.items().size(); ++i)
            if (ps.items()[i].first.starts_with(prefix) && ps.items()[i].first.ends_with(".w"))
                candidates.push_back(i);
        if (candidates.empty()) continue;
        const auto& [name, tensor] = ps.items()[candidates[static_cast<size_t>(
            pick.below(static_cast<int64_t>(candidates.size())))]];
        const int64_t idx = pick.below(tensor.numel());
        Tensor& target = probe.at(name);
        const double orig = target[idx];
        target[idx] = orig + h;
        const double fp = objective(probe);
        target[idx] = orig - h;
        const double fm = objective(probe);
        target[idx] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double an = bp.at(name)->grad.numel() ? bp.at(name)->grad[idx] : 0.0;
        const double denom = std::max({1e-3, std::fabs(fd), std::fabs(an)});
        INFO("parameter ", name, " idx ", idx);
        CHECK(std::fabs(fd - an) / denom < 1e-3);
        ++checked;
    }
    CHECK(checked >= 4);
}
