#pragma once

#include <string>
#include <utility>

#include "dsrnet/autodiff.hpp"
#include "dsrnet/params.hpp"
#include "dsrnet/rng.hpp"

namespace dsrnet {

// Two aligned feature grids, one per stream (transmission / reflection).
struct FeaturePair {
    Tensor t, r;
};
struct FeaturePairVar {
    Var t, r;
};

inline FeaturePairVar to_vars(const FeaturePair& p, bool requires_grad = false) {
    require_same_shape(p.t, p.r, "feature pair");
    return {requires_grad ? leaf(p.t) : constant(p.t), requires_grad ? leaf(p.r) : constant(p.r)};
}
inline FeaturePair to_values(const FeaturePairVar& p) { return {p.t->value, p.r->value}; }

// Cross-stream interaction flavor at the gate sites. Mugi is the shipped
// mechanism; None and Ytmt exist for the ablation harness.
enum class Interaction { Mugi, None, Ytmt };

Interaction interaction_from_string(const std::string& s);
std::string to_string(Interaction i);

// Mutually-gated interaction: each stream's former channel half multiplies
// the sibling stream's latter half. C must be even; outputs have C/2
// channels.
std::pair<Var, Var> mugi_gate(const Var& f_t, const Var& f_r);

// Positive/negative activation exchange (ablation stand-in).
std::pair<Var, Var> ytmt_exchange(const Var& a, const Var& b);

// f scaled per channel by a learned map of its pooled descriptor.
// w: (C,C,1,1), b: (C)
Var channel_attention(const Var& f, const Var& w, const Var& b);

// Dual-stream residual block: two sub-stages per stream
//   1) norm -> 1x1 expand (C->2C) -> 3x3 depthwise -> interact (2C->C)
//      -> channel attention -> 1x1 fuse -> +residual
//   2) norm -> 1x1 expand -> interact -> 1x1 fuse -> +residual
// Interaction sites couple the streams; everything else is per stream.
class MugiBlock {
public:
    MugiBlock(std::string prefix, int64_t width, Interaction interaction = Interaction::Mugi,
              bool tied = false);

    void init_params(ParamStore& ps, Rng& rng) const;
    FeaturePairVar forward(const FeaturePairVar& in, const BoundParams& bp) const;

    int64_t width() const { return width_; }
    const std::string& prefix() const { return prefix_; }

private:
    std::pair<Var, Var> interact(const std::string& site, const Var& d_t, const Var& d_r,
                                 const BoundParams& bp) const;

    std::string prefix_;
    int64_t width_;
    Interaction interaction_;
    bool tied_;
};

// Fuses a deep feature pair (half spatial size) into a shallower one:
// nearest x2 upscale + per-stream conv, channel concat with the shallow
// features, then a per-stream 1x1 fusion to the declared output width.
class DsfBlock {
public:
    DsfBlock(std::string prefix, int64_t deep_width, int64_t shallow_width, int64_t out_width,
             bool tied = false);

    void init_params(ParamStore& ps, Rng& rng) const;
    FeaturePairVar forward(const FeaturePairVar& deep, const FeaturePairVar& shallow,
                           const BoundParams& bp) const;

    int64_t out_width() const { return out_width_; }

private:
    std::string prefix_;
    int64_t deep_width_, shallow_width_, out_width_;
    bool tied_;
};

// Standalone stores for block-level tests.
ParamStore init_mugi_block_params(int64_t width, Interaction interaction, bool tied,
                                  uint64_t seed);
ParamStore init_dsf_block_params(int64_t deep_width, int64_t shallow_width, int64_t out_width,
                                 bool tied, uint64_t seed);

// Shared helpers for per-stream parameter registration.
void add_stream_conv(ParamStore& ps, Rng& rng, const std::string& base, int64_t cout,
                     int64_t cin_per_group, int64_t kh, int64_t kw, bool tied);
Var stream_conv(const Var& x, const BoundParams& bp, const std::string& base, const char* stream,
                int stride, int pad, int groups = 1);

} // namespace dsrnet
