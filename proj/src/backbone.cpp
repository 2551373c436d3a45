#include "dsrnet/backbone.hpp"

#include <cstring>
#include <fstream>

#include "dsrnet/errors.hpp"
#include "dsrnet/rng.hpp"
#include "dsrnet/serialize.hpp"

#include "json.hpp"

namespace dsrnet {

namespace {

enum class LayerKind { Conv, Relu, Pool };

struct LayerSpec {
    LayerKind kind;
    int64_t cin = 0, cout = 0; // conv only (multiples of the base width)
};

// The 19-layer column's feature stack: indices 0..35, pools at 4/9/18/27.
// cin/cout are in units of the base width (3 channels stay literal).
const std::vector<LayerSpec>& layer_table() {
    static const std::vector<LayerSpec> table = [] {
        std::vector<LayerSpec> t;
        auto conv = [&](int64_t cin, int64_t cout) { t.push_back({LayerKind::Conv, cin, cout}); };
        auto relu = [&] { t.push_back({LayerKind::Relu}); };
        auto pool = [&] { t.push_back({LayerKind::Pool}); };
        conv(0, 1); relu(); conv(1, 1); relu(); pool();        // stage 1 (0..4)
        conv(1, 2); relu(); conv(2, 2); relu(); pool();        // stage 2 (5..9)
        conv(2, 4); relu(); conv(4, 4); relu();
        conv(4, 4); relu(); conv(4, 4); relu(); pool();        // stage 3 (10..18)
        conv(4, 8); relu(); conv(8, 8); relu();
        conv(8, 8); relu(); conv(8, 8); relu(); pool();        // stage 4 (19..27)
        conv(8, 8); relu(); conv(8, 8); relu();
        conv(8, 8); relu(); conv(8, 8); relu();                // stage 5 (28..35)
        return t;
    }();
    return table;
}

constexpr double kImagenetMean[3] = {0.485, 0.456, 0.406};
constexpr double kImagenetStd[3] = {0.229, 0.224, 0.225};

std::string conv_name(int idx) { return "vgg.conv" + std::to_string(idx); }

constexpr char kBackboneMagic[8] = {'D', 'S', 'R', 'N', 'V', 'G', 'G', '1'};

} // namespace

VggBackbone::VggBackbone(BackboneConfig cfg, ParamStore weights)
    : cfg_(cfg), weights_(std::move(weights)) {
    if (cfg_.width < 1) throw ConfigError("backbone width must be positive");
    const auto& table = layer_table();
    for (size_t i = 0; i < table.size(); ++i) {
        if (table[i].kind != LayerKind::Conv) continue;
        const std::string name = conv_name(static_cast<int>(i));
        if (!weights_.has(name + ".w") || !weights_.has(name + ".b"))
            throw ConfigError("backbone weights missing " + name);
        const int64_t cin = table[i].cin == 0 ? 3 : table[i].cin * cfg_.width;
        const int64_t cout = table[i].cout * cfg_.width;
        const Tensor& w = weights_.at(name + ".w");
        if (w.rank() != 4 || w.dim(0) != cout || w.dim(1) != cin || w.dim(2) != 3 || w.dim(3) != 3)
            throw ConfigError("backbone weights have inconsistent shape at " + name);
    }
}

VggBackbone VggBackbone::seeded_random(const BackboneConfig& cfg, uint64_t seed) {
    ParamStore ps;
    Rng rng(seed);
    const auto& table = layer_table();
    for (size_t i = 0; i < table.size(); ++i) {
        if (table[i].kind != LayerKind::Conv) continue;
        const int64_t cin = table[i].cin == 0 ? 3 : table[i].cin * cfg.width;
        const int64_t cout = table[i].cout * cfg.width;
        const std::string name = conv_name(static_cast<int>(i));
        ps.add(name + ".w", init_conv_kernel(rng, cout, cin, 3, 3));
        // small random biases so random-backbone activations are not centered
        ps.add(name + ".b", rng.uniform_tensor({cout}, -0.05, 0.05));
    }
    return VggBackbone(cfg, std::move(ps));
}

VggBackbone VggBackbone::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ResourceError("cannot open backbone weights: " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kBackboneMagic, 8) != 0)
        throw ResourceError("not a backbone weights file: " + path);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(io::read_string(is));
    } catch (const nlohmann::json::exception&) {
        throw ResourceError("corrupt backbone meta block: " + path);
    }
    BackboneConfig cfg;
    cfg.width = meta.value("width", int64_t{64});
    cfg.normalize_input = meta.value("normalize_input", true);
    ParamStore ps = ParamStore::read(is);
    return VggBackbone(cfg, std::move(ps));
}

void VggBackbone::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ResourceError("cannot write backbone weights: " + path);
    os.write(kBackboneMagic, 8);
    nlohmann::json meta{{"width", cfg_.width}, {"normalize_input", cfg_.normalize_input}};
    io::write_string(os, meta.dump());
    weights_.write(os);
}

const std::vector<int>& VggBackbone::stage_end_taps() {
    static const std::vector<int> taps = {3, 8, 17, 26, 35};
    return taps;
}

const std::vector<int>& VggBackbone::perceptual_taps() {
    static const std::vector<int> taps = {2, 7, 12, 21, 30};
    return taps;
}

std::vector<int64_t> VggBackbone::tap_widths() const {
    return {cfg_.width, 2 * cfg_.width, 4 * cfg_.width, 8 * cfg_.width, 8 * cfg_.width};
}

std::vector<Var> VggBackbone::forward_taps(const Var& x, const std::vector<int>& taps) const {
    if (x->value.rank() != 3 || x->value.dim(0) != 3)
        throw ShapeError("backbone input must be (3,H,W)");
    int max_tap = 0;
    for (int t : taps) {
        if (t < 0 || t >= static_cast<int>(layer_table().size()))
            throw ConfigError("backbone tap out of range: " + std::to_string(t));
        max_tap = std::max(max_tap, t);
    }
    int pools_needed = 0;
    for (int i = 0; i <= max_tap; ++i)
        if (layer_table()[static_cast<size_t>(i)].kind == LayerKind::Pool) ++pools_needed;
    const int64_t div = int64_t{1} << pools_needed;
    if (x->value.dim(1) % div != 0 || x->value.dim(2) % div != 0)
        throw ShapeError("backbone input " + x->value.shape_str() + " not divisible by " +
                         std::to_string(div));

    Var cur = x;
    if (cfg_.normalize_input) {
        std::vector<double> scale(3), shift(3);
        for (int c = 0; c < 3; ++c) {
            scale[static_cast<size_t>(c)] = 1.0 / kImagenetStd[c];
            shift[static_cast<size_t>(c)] = -kImagenetMean[c] / kImagenetStd[c];
        }
        cur = affine_channel(cur, scale, shift);
    }

    std::vector<Var> outputs(taps.size());
    const auto& table = layer_table();
    for (int i = 0; i <= max_tap; ++i) {
        const LayerSpec& spec = table[static_cast<size_t>(i)];
        switch (spec.kind) {
            case LayerKind::Conv:
                cur = conv2d(cur, constant(weights_.at(conv_name(i) + ".w")),
                             constant(weights_.at(conv_name(i) + ".b")), 1, 1, 1);
                break;
            case LayerKind::Relu: cur = relu(cur); break;
            case LayerKind::Pool: cur = maxpool2(cur); break;
        }
        for (size_t k = 0; k < taps.size(); ++k)
            if (taps[k] == i) outputs[k] = cur;
    }
    return outputs;
}

std::vector<Tensor> VggBackbone::extract_features(const Tensor& image) const {
    auto vars = forward_taps(constant(image), stage_end_taps());
    std::vector<Tensor> out;
    out.reserve(vars.size());
    for (const auto& v : vars) out.push_back(v->value);
    return out;
}

} // namespace dsrnet
