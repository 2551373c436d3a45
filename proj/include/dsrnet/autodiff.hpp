#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dsrnet/tensor.hpp"

namespace dsrnet {

// Reverse-mode autodiff on a dynamically built tape. Nodes hold values by
// copy; gradients are allocated on demand during backward(). Graphs are
// rebuilt per step, which keeps the engine free of retained state.
class Node;
using Var = std::shared_ptr<Node>;

class Node {
public:
    Tensor value;
    Tensor grad; // allocated lazily, same shape as value
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop; // pulls this->grad into parents

    Tensor& ensure_grad() {
        if (grad.numel() != value.numel()) grad = Tensor::zeros(value.shape());
        return grad;
    }
};

Var constant(Tensor v);
Var leaf(Tensor v); // requires_grad = true

// Runs reverse accumulation from a scalar (shape {1}) root.
void backward(const Var& root);

// ---- elementwise (same shape) ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

// ---- unary ----
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_const(const Var& a, double c);
Var relu(const Var& a);
Var tanh_of(const Var& a);
Var sigmoid(const Var& a);
Var silu(const Var& a);
Var abs_of(const Var& a);
Var square(const Var& a);

// ---- reductions / scalar plumbing ----
Var mean_all(const Var& a); // -> {1}
Var sum_all(const Var& a);  // -> {1}
// y = a * s where s is a {1} graph scalar
Var scale_by(const Var& a, const Var& s);

// ---- structure ----
Var concat_channels(const std::vector<Var>& xs);
Var slice_channels(const Var& a, int64_t c0, int64_t c1);

// ---- spatial ----
// zero-padded cross-correlation; w: (Cout, Cin/groups, kh, kw), b: (Cout)
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int groups);
Var maxpool2(const Var& x);                  // 2x2 stride 2, floor mode
Var avgpool2_ceil(const Var& x);             // 2x2 stride 2, ceil mode, border-clipped windows
Var upsample_nearest2(const Var& x);
// per-channel normalization over spatial positions, learned scale/shift (both {C})
Var layer_norm_channels(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);
Var global_avg_pool(const Var& x);           // (C,H,W) -> (C,1,1)
Var mul_channel(const Var& x, const Var& s); // s: (C,1,1) or {C}
// y[c] = scale[c] * x[c] + shift[c] with fixed (non-learned) coefficients
Var affine_channel(const Var& x, std::vector<double> scale, std::vector<double> shift);
// forward differences, valid region
Var grad_x(const Var& a); // (C,H,W) -> (C,H,W-1)
Var grad_y(const Var& a); // (C,H,W) -> (C,H-1,W)

} // namespace dsrnet
