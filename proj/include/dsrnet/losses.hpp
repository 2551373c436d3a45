#pragma once

#include <array>
#include <optional>
#include <utility>

#include "dsrnet/autodiff.hpp"
#include "dsrnet/backbone.hpp"

namespace dsrnet {

// Normalization of the gradient magnitudes entering the exclusion product.
// Balanced scales the reflection term so both factors carry comparable
// energy per scale and direction; Fixed uses the given constants.
struct EtaPolicy {
    enum class Mode { Balanced, Fixed } mode = Mode::Balanced;
    double eta1 = 1.0, eta2 = 1.0; // Fixed mode only
};

struct LossWeights {
    double alpha = 2.0;                 // gradient-term weight in the pixel loss
    double beta1 = 0.01;                // perceptual
    double beta2 = 1.0;                 // exclusion
    double beta3 = 0.2;                 // reconstruction
    std::array<double, 5> omega = {1.0 / 2.6, 1.0 / 4.8, 1.0 / 3.7, 1.0 / 5.6, 10.0 / 1.5};
    int exclusion_scales = 3;
    EtaPolicy eta;

    void validate() const;
};

// How the reconstruction criterion is wired (ablation rows).
enum class ReconstructionMode { Residual, Linear, Off };
ReconstructionMode reconstruction_from_string(const std::string& s);
std::string to_string(ReconstructionMode m);

struct LossBreakdown {
    double pixel = 0.0;
    double perceptual = 0.0;
    double exclusion = 0.0;
    double reconstruction = 0.0;
    double total = 0.0;
};

// forward differences over the valid region; requires H, W >= 2
std::pair<Var, Var> image_gradients(const Var& img);

// mean squared layer errors plus alpha-weighted mean absolute gradient
// errors (directions averaged). Omitting gt_r drops the R-dependent terms
// (real records without a reflection ground truth).
Var pixel_loss(const Var& pred_t, const Var& pred_r, const Var& gt_t, const Var& gt_r,
               double alpha);
Var pixel_loss_t_only(const Var& pred_t, const Var& gt_t, double alpha);

// sum_i omega_i * L1(phi_i(pred), phi_i(gt)) over the extractor's taps
using FeatureExtractor = std::function<std::vector<Var>(const Var&)>;
Var perceptual_loss(const Var& pred_t, const Var& gt_t, const FeatureExtractor& taps,
                    const std::vector<double>& omega);
Var perceptual_loss(const Var& pred_t, const Var& gt_t, const VggBackbone& backbone,
                    const std::array<double, 5>& omega);
// variant with the ground-truth tap activations precomputed (they are
// constant per sample, so training caches them)
Var perceptual_loss_cached_gt(const Var& pred_t, const std::vector<Tensor>& gt_taps,
                              const VggBackbone& backbone, const std::array<double, 5>& omega);

// multi-scale product of tanh-compressed gradient magnitudes
Var exclusion_loss(const Var& pred_t, const Var& pred_r, int scales, const EtaPolicy& eta);

// L1 of (input - pred_t - pred_r - residue)
Var r3_loss(const Var& input, const Var& pred_t, const Var& pred_r, const Var& residue);

struct TotalLoss {
    Var total;                              // scalar graph root
    Var pixel, perceptual, exclusion, reconstruction; // null when skipped
    LossBreakdown values() const;
};

// Full objective. residue may be null (Linear / Off reconstruction modes);
// gt_r may be null for records without reflection ground truth; backbone may
// be null only when beta1 == 0. gt_perceptual_taps, when given, replaces the
// ground-truth feature extraction in the perceptual term.
TotalLoss total_loss(const Var& input, const Var& pred_t, const Var& pred_r, const Var& residue,
                     const Var& gt_t, const Var& gt_r, const LossWeights& weights,
                     const VggBackbone* backbone,
                     ReconstructionMode recon = ReconstructionMode::Residual,
                     const std::vector<Tensor>* gt_perceptual_taps = nullptr);

} // namespace dsrnet
