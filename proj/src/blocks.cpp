#include "dsrnet/blocks.hpp"

#include "dsrnet/errors.hpp"

namespace dsrnet {

Interaction interaction_from_string(const std::string& s) {
    if (s == "mugi") return Interaction::Mugi;
    if (s == "off" || s == "none") return Interaction::None;
    if (s == "ytmt") return Interaction::Ytmt;
    throw ConfigError("unknown interaction mode: " + s);
}

std::string to_string(Interaction i) {
    switch (i) {
        case Interaction::Mugi: return "mugi";
        case Interaction::None: return "off";
        default: return "ytmt";
    }
}

std::pair<Var, Var> mugi_gate(const Var& f_t, const Var& f_r) {
    require_same_shape(f_t->value, f_r->value, "mugi_gate");
    const int64_t c = f_t->value.dim(0);
    if (c % 2 != 0)
        throw ChannelCountError("mugi_gate: channel count must be even, got " + std::to_string(c));
    const int64_t half = c / 2;
    Var t_former = slice_channels(f_t, 0, half);
    Var t_latter = slice_channels(f_t, half, c);
    Var r_former = slice_channels(f_r, 0, half);
    Var r_latter = slice_channels(f_r, half, c);
    return {mul(t_former, r_latter), mul(r_former, t_latter)};
}

std::pair<Var, Var> ytmt_exchange(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "ytmt_exchange");
    Var a_pos = relu(a), b_pos = relu(b);
    Var a_neg = sub(a, a_pos), b_neg = sub(b, b_pos);
    return {add(a_pos, b_neg), add(b_pos, a_neg)};
}

Var channel_attention(const Var& f, const Var& w, const Var& b) {
    Var pooled = global_avg_pool(f);
    Var scales = conv2d(pooled, w, b, 1, 0, 1); // (C,1,1)
    return mul_channel(f, scales);
}

void add_stream_conv(ParamStore& ps, Rng& rng, const std::string& base, int64_t cout,
                     int64_t cin_per_group, int64_t kh, int64_t kw, bool tied) {
    Tensor kt = init_conv_kernel(rng, cout, cin_per_group, kh, kw);
    ps.add(base + ".t.w", kt);
    ps.add(base + ".r.w", tied ? kt : init_conv_kernel(rng, cout, cin_per_group, kh, kw));
    ps.add(base + ".t.b", Tensor::zeros({cout}));
    ps.add(base + ".r.b", Tensor::zeros({cout}));
}

Var stream_conv(const Var& x, const BoundParams& bp, const std::string& base, const char* stream,
                int stride, int pad, int groups) {
    const std::string key = base + "." + stream;
    return conv2d(x, bp.at(key + ".w"), bp.at(key + ".b"), stride, pad, groups);
}

namespace {

void add_stream_norm(ParamStore& ps, const std::string& base, int64_t c) {
    ps.add(base + ".t.g", Tensor::full({c}, 1.0));
    ps.add(base + ".r.g", Tensor::full({c}, 1.0));
    ps.add(base + ".t.sh", Tensor::zeros({c}));
    ps.add(base + ".r.sh", Tensor::zeros({c}));
}

Var stream_norm(const Var& x, const BoundParams& bp, const std::string& base,
                const char* stream) {
    const std::string key = base + "." + stream;
    return layer_norm_channels(x, bp.at(key + ".g"), bp.at(key + ".sh"));
}

} // namespace

MugiBlock::MugiBlock(std::string prefix, int64_t width, Interaction interaction, bool tied)
    : prefix_(std::move(prefix)), width_(width), interaction_(interaction), tied_(tied) {
    if (width < 1) throw ConfigError(prefix_ + ": block width must be positive");
    if (width % 2 != 0)
        throw ConfigError(prefix_ + ": gated block width must be even, got " +
                          std::to_string(width));
}

void MugiBlock::init_params(ParamStore& ps, Rng& rng) const {
    const int64_t c = width_;
    add_stream_norm(ps, prefix_ + ".ln1", c);
    add_stream_conv(ps, rng, prefix_ + ".expand1", 2 * c, c, 1, 1, tied_);
    add_stream_conv(ps, rng, prefix_ + ".dw", 2 * c, 1, 3, 3, tied_);
    if (interaction_ != Interaction::Mugi)
        add_stream_conv(ps, rng, prefix_ + ".halve1", c, 2 * c, 1, 1, tied_);
    add_stream_conv(ps, rng, prefix_ + ".ca", c, c, 1, 1, tied_);
    add_stream_conv(ps, rng, prefix_ + ".fuse1", c, c, 1, 1, tied_);
    // zero-initialized per-channel residual scales: blocks start as the
    // identity and open up during training (the converted block's convention)
    ps.add(prefix_ + ".res1.t.s", Tensor::zeros({c}));
    ps.add(prefix_ + ".res1.r.s", Tensor::zeros({c}));
    add_stream_norm(ps, prefix_ + ".ln2", c);
    add_stream_conv(ps, rng, prefix_ + ".expand2", 2 * c, c, 1, 1, tied_);
    if (interaction_ != Interaction::Mugi)
        add_stream_conv(ps, rng, prefix_ + ".halve2", c, 2 * c, 1, 1, tied_);
    add_stream_conv(ps, rng, prefix_ + ".fuse2", c, c, 1, 1, tied_);
    ps.add(prefix_ + ".res2.t.s", Tensor::zeros({c}));
    ps.add(prefix_ + ".res2.r.s", Tensor::zeros({c}));
}

std::pair<Var, Var> MugiBlock::interact(const std::string& site, const Var& d_t, const Var& d_r,
                                        const BoundParams& bp) const {
    switch (interaction_) {
        case Interaction::Mugi:
            return mugi_gate(d_t, d_r);
        case Interaction::None:
            return {stream_conv(d_t, bp, site, "t", 1, 0), stream_conv(d_r, bp, site, "r", 1, 0)};
        default: { // Ytmt: per-stream halving then activation exchange
            Var c_t = stream_conv(d_t, bp, site, "t", 1, 0);
            Var c_r = stream_conv(d_r, bp, site, "r", 1, 0);
            return ytmt_exchange(c_t, c_r);
        }
    }
}

FeaturePairVar MugiBlock::forward(const FeaturePairVar& in, const BoundParams& bp) const {
    require_same_shape(in.t->value, in.r->value, prefix_.c_str());
    if (in.t->value.dim(0) != width_)
        throw ShapeError(prefix_ + ": expected width " + std::to_string(width_) + ", got " +
                         std::to_string(in.t->value.dim(0)));

    // stage 1: norm -> expand -> depthwise -> interact -> attention -> fuse
    Var n_t = stream_norm(in.t, bp, prefix_ + ".ln1", "t");
    Var n_r = stream_norm(in.r, bp, prefix_ + ".ln1", "r");
    Var e_t = stream_conv(n_t, bp, prefix_ + ".expand1", "t", 1, 0);
    Var e_r = stream_conv(n_r, bp, prefix_ + ".expand1", "r", 1, 0);
    Var d_t = stream_conv(e_t, bp, prefix_ + ".dw", "t", 1, 1, static_cast<int>(2 * width_));
    Var d_r = stream_conv(e_r, bp, prefix_ + ".dw", "r", 1, 1, static_cast<int>(2 * width_));
    auto [g_t, g_r] = interact(prefix_ + ".halve1", d_t, d_r, bp);
    Var a_t = channel_attention(g_t, bp.at(prefix_ + ".ca.t.w"), bp.at(prefix_ + ".ca.t.b"));
    Var a_r = channel_attention(g_r, bp.at(prefix_ + ".ca.r.w"), bp.at(prefix_ + ".ca.r.b"));
    Var y_t = add(in.t, mul_channel(stream_conv(a_t, bp, prefix_ + ".fuse1", "t", 1, 0),
                                    bp.at(prefix_ + ".res1.t.s")));
    Var y_r = add(in.r, mul_channel(stream_conv(a_r, bp, prefix_ + ".fuse1", "r", 1, 0),
                                    bp.at(prefix_ + ".res1.r.s")));

    // stage 2: norm -> expand -> interact -> fuse
    Var m_t = stream_norm(y_t, bp, prefix_ + ".ln2", "t");
    Var m_r = stream_norm(y_r, bp, prefix_ + ".ln2", "r");
    Var f_t = stream_conv(m_t, bp, prefix_ + ".expand2", "t", 1, 0);
    Var f_r = stream_conv(m_r, bp, prefix_ + ".expand2", "r", 1, 0);
    auto [h_t, h_r] = interact(prefix_ + ".halve2", f_t, f_r, bp);
    Var z_t = add(y_t, mul_channel(stream_conv(h_t, bp, prefix_ + ".fuse2", "t", 1, 0),
                                   bp.at(prefix_ + ".res2.t.s")));
    Var z_r = add(y_r, mul_channel(stream_conv(h_r, bp, prefix_ + ".fuse2", "r", 1, 0),
                                   bp.at(prefix_ + ".res2.r.s")));
    return {z_t, z_r};
}

DsfBlock::DsfBlock(std::string prefix, int64_t deep_width, int64_t shallow_width,
                   int64_t out_width, bool tied)
    : prefix_(std::move(prefix)), deep_width_(deep_width), shallow_width_(shallow_width),
      out_width_(out_width), tied_(tied) {
    if (deep_width < 1 || shallow_width < 1 || out_width < 1)
        throw ConfigError(prefix_ + ": widths must be positive");
}

void DsfBlock::init_params(ParamStore& ps, Rng& rng) const {
    add_stream_conv(ps, rng, prefix_ + ".up", deep_width_, deep_width_, 3, 3, tied_);
    add_stream_conv(ps, rng, prefix_ + ".fuse", out_width_, deep_width_ + shallow_width_, 1, 1,
                    tied_);
}

FeaturePairVar DsfBlock::forward(const FeaturePairVar& deep, const FeaturePairVar& shallow,
                                 const BoundParams& bp) const {
    require_same_shape(deep.t->value, deep.r->value, prefix_.c_str());
    require_same_shape(shallow.t->value, shallow.r->value, prefix_.c_str());
    if (deep.t->value.dim(0) != deep_width_ || shallow.t->value.dim(0) != shallow_width_)
        throw ShapeError(prefix_ + ": channel widths do not match the block configuration");
    if (deep.t->value.dim(1) * 2 != shallow.t->value.dim(1) ||
        deep.t->value.dim(2) * 2 != shallow.t->value.dim(2))
        throw ShapeError(prefix_ + ": deep features must be exactly half the shallow size, got " +
                         deep.t->value.shape_str() + " vs " + shallow.t->value.shape_str());

    Var u_t = stream_conv(upsample_nearest2(deep.t), bp, prefix_ + ".up", "t", 1, 1);
    Var u_r = stream_conv(upsample_nearest2(deep.r), bp, prefix_ + ".up", "r", 1, 1);
    Var c_t = concat_channels({u_t, shallow.t});
    Var c_r = concat_channels({u_r, shallow.r});
    return {stream_conv(c_t, bp, prefix_ + ".fuse", "t", 1, 0),
            stream_conv(c_r, bp, prefix_ + ".fuse", "r", 1, 0)};
}

ParamStore init_mugi_block_params(int64_t width, Interaction interaction, bool tied,
                                  uint64_t seed) {
    MugiBlock block("block", width, interaction, tied);
    ParamStore ps;
    Rng rng(seed);
    block.init_params(ps, rng);
    return ps;
}

ParamStore init_dsf_block_params(int64_t deep_width, int64_t shallow_width, int64_t out_width,
                                 bool tied, uint64_t seed) {
    DsfBlock block("dsf", deep_width, shallow_width, out_width, tied);
    ParamStore ps;
    Rng rng(seed);
    block.init_params(ps, rng);
    return ps;
}

} // namespace dsrnet
