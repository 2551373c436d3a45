#include "dsrnet/losses.hpp"

#include "dsrnet/errors.hpp"

namespace dsrnet {

void LossWeights::validate() const {
    if (alpha < 0 || beta1 < 0 || beta2 < 0 || beta3 < 0)
        throw ConfigError("loss weights must be non-negative");
    for (double w : omega)
        if (w < 0) throw ConfigError("perceptual layer weights must be non-negative");
    if (exclusion_scales < 1) throw ConfigError("exclusion scale count must be >= 1");
}

ReconstructionMode reconstruction_from_string(const std::string& s) {
    if (s == "residual") return ReconstructionMode::Residual;
    if (s == "linear") return ReconstructionMode::Linear;
    if (s == "off" || s == "none") return ReconstructionMode::Off;
    throw ConfigError("unknown reconstruction mode: " + s);
}

std::string to_string(ReconstructionMode m) {
    switch (m) {
        case ReconstructionMode::Residual: return "residual";
        case ReconstructionMode::Linear: return "linear";
        default: return "off";
    }
}

std::pair<Var, Var> image_gradients(const Var& img) {
    if (img->value.rank() != 3 || img->value.dim(1) < 2 || img->value.dim(2) < 2)
        throw ShapeError("image_gradients: need H, W >= 2, got " + img->value.shape_str());
    return {grad_x(img), grad_y(img)};
}

namespace {

Var mse(const Var& a, const Var& b) { return mean_all(square(sub(a, b))); }
Var l1(const Var& a, const Var& b) { return mean_all(abs_of(sub(a, b))); }

// mean absolute gradient difference, directions averaged
Var grad_l1(const Var& a, const Var& b) {
    auto [ax, ay] = image_gradients(a);
    auto [bx, by] = image_gradients(b);
    return scale(add(l1(ax, bx), l1(ay, by)), 0.5);
}

} // namespace

Var pixel_loss(const Var& pred_t, const Var& pred_r, const Var& gt_t, const Var& gt_r,
               double alpha) {
    require_same_shape(pred_t->value, gt_t->value, "pixel_loss");
    require_same_shape(pred_r->value, gt_r->value, "pixel_loss");
    require_same_shape(pred_t->value, pred_r->value, "pixel_loss");
    Var loss = add(mse(pred_t, gt_t), mse(pred_r, gt_r));
    if (alpha != 0.0)
        loss = add(loss, scale(add(grad_l1(pred_t, gt_t), grad_l1(pred_r, gt_r)), alpha));
    return loss;
}

Var pixel_loss_t_only(const Var& pred_t, const Var& gt_t, double alpha) {
    require_same_shape(pred_t->value, gt_t->value, "pixel_loss");
    Var loss = mse(pred_t, gt_t);
    if (alpha != 0.0) loss = add(loss, scale(grad_l1(pred_t, gt_t), alpha));
    return loss;
}

Var perceptual_loss(const Var& pred_t, const Var& gt_t, const FeatureExtractor& taps,
                    const std::vector<double>& omega) {
    require_same_shape(pred_t->value, gt_t->value, "perceptual_loss");
    auto pred_feats = taps(pred_t);
    auto gt_feats = taps(gt_t);
    if (pred_feats.size() != omega.size() || gt_feats.size() != omega.size())
        throw ConfigError("perceptual_loss: one weight per extractor tap required");
    Var loss = constant(Tensor::scalar(0.0));
    for (size_t i = 0; i < omega.size(); ++i) {
        if (omega[i] == 0.0) continue;
        loss = add(loss, scale(l1(pred_feats[i], gt_feats[i]), omega[i]));
    }
    return loss;
}

Var perceptual_loss(const Var& pred_t, const Var& gt_t, const VggBackbone& backbone,
                    const std::array<double, 5>& omega) {
    return perceptual_loss(
        pred_t, gt_t,
        [&backbone](const Var& x) {
            return backbone.forward_taps(x, VggBackbone::perceptual_taps());
        },
        std::vector<double>(omega.begin(), omega.end()));
}

Var perceptual_loss_cached_gt(const Var& pred_t, const std::vector<Tensor>& gt_taps,
                              const VggBackbone& backbone, const std::array<double, 5>& omega) {
    auto pred_feats = backbone.forward_taps(pred_t, VggBackbone::perceptual_taps());
    if (gt_taps.size() != pred_feats.size())
        throw ConfigError("perceptual_loss: cached tap count mismatch");
    Var loss = constant(Tensor::scalar(0.0));
    for (size_t i = 0; i < omega.size(); ++i) {
        if (omega[i] == 0.0) continue;
        loss = add(loss, scale(l1(pred_feats[i], constant(gt_taps[i])), omega[i]));
    }
    return loss;
}

Var exclusion_loss(const Var& pred_t, const Var& pred_r, int scales, const EtaPolicy& eta) {
    require_same_shape(pred_t->value, pred_r->value, "exclusion_loss");
    if (scales < 1) throw ConfigError("exclusion_loss: scale count must be >= 1");
    const int64_t min_side = (int64_t{1} << (scales - 1)) + 1;
    if (pred_t->value.dim(1) < min_side || pred_t->value.dim(2) < min_side)
        throw ShapeError("exclusion_loss: image too small for " + std::to_string(scales) +
                         " dyadic scales");

    Var t = pred_t, r = pred_r;
    Var acc = constant(Tensor::scalar(0.0));
    for (int n = 0; n < scales; ++n) {
        if (n > 0) {
            t = avgpool2_ceil(t);
            r = avgpool2_ceil(r);
        }
        auto [tx, ty] = image_gradients(t);
        auto [rx, ry] = image_gradients(r);
        Var dir_sum = constant(Tensor::scalar(0.0));
        for (const auto& [gt, gr] : {std::pair<Var, Var>{tx, rx}, std::pair<Var, Var>{ty, ry}}) {
            Var at = abs_of(gt), ar = abs_of(gr);
            Var t_term, r_term;
            if (eta.mode == EtaPolicy::Mode::Balanced) {
                // eta1 = 1; eta2 equalizes the mean gradient magnitudes
                Var eta2 = div(mean_all(at), add_const(mean_all(ar), 1e-6));
                t_term = tanh_of(at);
                r_term = tanh_of(scale_by(ar, eta2));
            } else {
                t_term = tanh_of(scale(at, eta.eta1));
                r_term = tanh_of(scale(ar, eta.eta2));
            }
            dir_sum = add(dir_sum, mean_all(square(mul(t_term, r_term))));
        }
        acc = add(acc, scale(dir_sum, 0.5));
    }
    return scale(acc, 1.0 / static_cast<double>(scales));
}

Var r3_loss(const Var& input, const Var& pred_t, const Var& pred_r, const Var& residue) {
    require_same_shape(input->value, pred_t->value, "r3_loss");
    require_same_shape(input->value, pred_r->value, "r3_loss");
    require_same_shape(input->value, residue->value, "r3_loss");
    return mean_all(abs_of(sub(sub(sub(input, pred_t), pred_r), residue)));
}

LossBreakdown TotalLoss::values() const {
    LossBreakdown b;
    b.pixel = pixel ? pixel->value[0] : 0.0;
    b.perceptual = perceptual ? perceptual->value[0] : 0.0;
    b.exclusion = exclusion ? exclusion->value[0] : 0.0;
    b.reconstruction = reconstruction ? reconstruction->value[0] : 0.0;
    b.total = total ? total->value[0] : 0.0;
    return b;
}

TotalLoss total_loss(const Var& input, const Var& pred_t, const Var& pred_r, const Var& residue,
                     const Var& gt_t, const Var& gt_r, const LossWeights& weights,
                     const VggBackbone* backbone, ReconstructionMode recon,
                     const std::vector<Tensor>* gt_perceptual_taps) {
    weights.validate();
    TotalLoss out;
    out.pixel = gt_r ? pixel_loss(pred_t, pred_r, gt_t, gt_r, weights.alpha)
                     : pixel_loss_t_only(pred_t, gt_t, weights.alpha);
    Var total = out.pixel;

    if (weights.beta1 != 0.0) {
        if (!backbone) throw ResourceError("total_loss: perceptual term requires a backbone");
        out.perceptual =
            gt_perceptual_taps
                ? perceptual_loss_cached_gt(pred_t, *gt_perceptual_taps, *backbone, weights.omega)
                : perceptual_loss(pred_t, gt_t, *backbone, weights.omega);
        total = add(total, scale(out.perceptual, weights.beta1));
    }

    out.exclusion = exclusion_loss(pred_t, pred_r, weights.exclusion_scales, weights.eta);
    if (weights.beta2 != 0.0) total = add(total, scale(out.exclusion, weights.beta2));

    if (recon != ReconstructionMode::Off) {
        Var phi = recon == ReconstructionMode::Residual
                      ? residue
                      : constant(Tensor::zeros(input->value.shape()));
        if (!phi) throw ConfigError("total_loss: residual reconstruction needs a residue term");
        out.reconstruction = r3_loss(input, pred_t, pred_r, phi);
        if (weights.beta3 != 0.0) total = add(total, scale(out.reconstruction, weights.beta3));
    }

    out.total = total;
    return out;
}

} // namespace dsrnet
