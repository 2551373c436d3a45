#pragma once

#include <string>
#include <vector>

#include "dsrnet/autodiff.hpp"
#include "dsrnet/params.hpp"

namespace dsrnet {

// Hierarchical VGG-19-style feature extractor: 16 convolutions in 5 stages
// separated by 2x2 max pooling, base width configurable (64 reproduces the
// classic column widths 64/128/256/512/512). Weights are frozen; gradients
// flow only to the input, which is what the perceptual objective needs.
struct BackboneConfig {
    int64_t width = 64;
    bool normalize_input = true; // ImageNet mean/std
};

class VggBackbone {
public:
    VggBackbone(BackboneConfig cfg, ParamStore weights);

    static VggBackbone seeded_random(const BackboneConfig& cfg, uint64_t seed);
    static VggBackbone load(const std::string& path); // ResourceError on failure
    void save(const std::string& path) const;

    // Canonical feature-stack indices (conv/relu/pool numbering of the
    // 19-layer column). Stage ends are the five pre-pooling activations at
    // strides {1,2,4,8,16}; the perceptual taps are the conv outputs
    // {2,7,12,21,30}.
    static const std::vector<int>& stage_end_taps();
    static const std::vector<int>& perceptual_taps();

    std::vector<int64_t> tap_widths() const; // widths of the stage ends

    // Runs the stack far enough to produce every requested tap, in the order
    // given. x: (3,H,W) in [0,1]; H, W divisible by 16 when any tap sits
    // behind all four pools.
    std::vector<Var> forward_taps(const Var& x, const std::vector<int>& taps) const;

    // Stage-end features of an image, as plain tensors (no gradients).
    std::vector<Tensor> extract_features(const Tensor& image) const;

    const BackboneConfig& config() const { return cfg_; }
    const ParamStore& weights() const { return weights_; }

private:
    BackboneConfig cfg_;
    ParamStore weights_;
};

} // namespace dsrnet
