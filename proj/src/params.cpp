#include "dsrnet/params.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "dsrnet/errors.hpp"
#include "dsrnet/serialize.hpp"

namespace dsrnet {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
    if (has(name)) throw ConfigError("duplicate parameter name: " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return items_[it->second].second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return items_[it->second].second;
}

int64_t ParamStore::total_elements() const {
    int64_t n = 0;
    for (const auto& [_, t] : items_) n += t.numel();
    return n;
}

bool ParamStore::same_layout(const ParamStore& o) const {
    if (items_.size() != o.items_.size()) return false;
    for (size_t i = 0; i < items_.size(); ++i)
        if (items_[i].first != o.items_[i].first ||
            items_[i].second.shape() != o.items_[i].second.shape())
            return false;
    return true;
}

ParamStore ParamStore::zeros_like() const {
    ParamStore z;
    for (const auto& [name, t] : items_) z.add(name, Tensor::zeros(t.shape()));
    return z;
}

namespace {
constexpr char kParamMagic[8] = {'D', 'S', 'R', 'N', 'P', 'A', 'R', '1'};
}

void ParamStore::write(std::ostream& os) const {
    os.write(kParamMagic, 8);
    io::write_u32(os, static_cast<uint32_t>(items_.size()));
    for (const auto& [name, t] : items_) {
        io::write_string(os, name);
        io::write_u32(os, static_cast<uint32_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) io::write_i64(os, t.dim(i));
        io::write_doubles(os, t.data(), t.numel());
    }
}

ParamStore ParamStore::read(std::istream& is) {
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kParamMagic, 8) != 0)
        throw CheckpointError("not a parameter block (bad magic)");
    const uint32_t count = io::read_u32(is);
    ParamStore store;
    for (uint32_t k = 0; k < count; ++k) {
        const std::string name = io::read_string(is);
        const uint32_t rank = io::read_u32(is);
        if (rank > 8) throw CheckpointError("corrupt parameter block: absurd rank");
        std::vector<int64_t> shape(rank);
        for (uint32_t i = 0; i < rank; ++i) shape[i] = io::read_i64(is);
        Tensor t(shape);
        io::read_doubles(is, t.data(), t.numel());
        store.add(name, std::move(t));
    }
    return store;
}

BoundParams::BoundParams(const ParamStore& store) {
    leaves_.reserve(store.size());
    for (const auto& [name, t] : store.items()) {
        index_[name] = leaves_.size();
        leaves_.emplace_back(name, leaf(t));
    }
}

Var BoundParams::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unbound parameter: " + name);
    return leaves_[it->second].second;
}

Tensor init_conv_kernel(Rng& rng, int64_t cout, int64_t cin_per_group, int64_t kh, int64_t kw) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin_per_group * kh * kw));
    return rng.uniform_tensor({cout, cin_per_group, kh, kw}, -bound, bound);
}

} // namespace dsrnet
