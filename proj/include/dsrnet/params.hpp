#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dsrnet/autodiff.hpp"
#include "dsrnet/rng.hpp"
#include "dsrnet/tensor.hpp"

namespace dsrnet {

// Ordered, named parameter tensors. Registration order is the serialization
// order, so identical configs always produce identical files.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t);
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;

    size_t size() const { return items_.size(); }
    std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

    int64_t total_elements() const;
    bool same_layout(const ParamStore& o) const;

    // Zero-filled clone with identical names/shapes (optimizer moments).
    ParamStore zeros_like() const;

    void write(std::ostream& os) const;
    static ParamStore read(std::istream& is);

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::map<std::string, size_t> index_;
};

// Per-step autodiff leaves for every parameter, in store order.
class BoundParams {
public:
    explicit BoundParams(const ParamStore& store);
    Var at(const std::string& name) const;
    const std::vector<std::pair<std::string, Var>>& leaves() const { return leaves_; }

private:
    std::vector<std::pair<std::string, Var>> leaves_;
    std::map<std::string, size_t> index_;
};

// fan-in-scaled uniform kernel init; biases start at zero
Tensor init_conv_kernel(Rng& rng, int64_t cout, int64_t cin_per_group, int64_t kh, int64_t kw);

} // namespace dsrnet
