#pragma once

#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "dsrnet/backbone.hpp"
#include "dsrnet/blocks.hpp"

#include "json.hpp"

namespace dsrnet {

// Semantic encoder choice; Hypercolumn and None are ablation baselines.
enum class Encoder { Dsfnet, Hypercolumn, None };

Encoder encoder_from_string(const std::string& s);
std::string to_string(Encoder e);

struct ModelConfig {
    int64_t base_width = 64;         // stream width entering the decomposition stage
    int64_t dsd_levels = 3;          // U depth (3 = two downsamplings)
    int64_t dsd_blocks_per_level = 2;
    Interaction interaction = Interaction::Mugi;
    Encoder encoder = Encoder::Dsfnet;
    bool tied_streams = false;       // equal per-stream tensors (symmetry tests)
    bool with_lrm = true;            // registers the residue module
    int64_t backbone_width = 64;

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

// (transmission, reflection, residue), all at the input's spatial size.
// Transmission/reflection are clipped to [0,1]; residue lies strictly in
// (-1,1) and is all-zero when the residue branch is disabled.
struct Decomposition {
    Tensor transmission, reflection, residue;
    void validate() const;
};

struct ForwardOutputs {
    Var t_pred, r_pred;     // unclipped head outputs (3,H,W)
    Var residue;            // null when the residue branch is skipped
    FeaturePairVar refined; // U output features
    FeaturePairVar prefinal; // features entering the heads / residue module
};

class DsrNet {
public:
    explicit DsrNet(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }

    ParamStore init_params(uint64_t seed) const;

    // Stage 1: pyramid fusion of backbone taps plus the RGB stem. feats must
    // match stage_end_taps() of a backbone with the configured width.
    FeaturePairVar dsfnet_forward(const Var& image, const std::vector<Var>& feats,
                                  const BoundParams& bp) const;

    // Stage 2: U-shaped refinement; returns (refined, prefinal, (T,R) heads).
    std::tuple<FeaturePairVar, FeaturePairVar, std::pair<Var, Var>>
    dsdnet_forward(const FeaturePairVar& pair, const BoundParams& bp) const;

    // Residue branch: interactive block, stream concat, fusion, tanh.
    Var lrm_forward(const FeaturePairVar& prefinal, const BoundParams& bp) const;

    // Whole network on an already padded (divisible-by-16) image in [0,1].
    // backbone may be null when encoder == None. cached_feats, when given,
    // replaces the backbone feature extraction (they are input-constant).
    ForwardOutputs forward(const Tensor& image, const VggBackbone* backbone,
                           const BoundParams& bp, bool with_residue,
                           const std::vector<Tensor>* cached_feats = nullptr) const;

    // Arbitrary-size inference: reflect-pad to /16, crop back, clip layers.
    Decomposition infer(const Tensor& image, const VggBackbone* backbone, const ParamStore& ps,
                        bool with_residue) const;

private:
    FeaturePairVar encode(const Var& image, const std::vector<Var>& feats,
                          const BoundParams& bp) const;
    Var rgb_stem(const Var& image, const BoundParams& bp) const;

    ModelConfig cfg_;
    std::vector<int64_t> tap_widths_;
    std::vector<MugiBlock> tap_blocks_;
    std::vector<DsfBlock> dsf_blocks_;
    std::vector<MugiBlock> post_blocks_;
    std::optional<MugiBlock> top_block_;
    std::vector<std::vector<MugiBlock>> enc_blocks_;
    std::vector<MugiBlock> bottom_blocks_;
    std::vector<std::vector<MugiBlock>> dec_blocks_;
    std::optional<MugiBlock> final_block_;
    std::optional<MugiBlock> lrm_block_;
};

// Deterministic parameter set for the given seed (spec-level entry point;
// equivalent to DsrNet(cfg).init_params(seed)).
ParamStore init_model_params(const ModelConfig& cfg, uint64_t seed);

// Backbone stage-end features of an image (errors if H or W is not a
// multiple of 16); thin wrapper kept close to its contract.
std::vector<Tensor> extract_backbone_features(const Tensor& image, const VggBackbone& backbone);

} // namespace dsrnet
