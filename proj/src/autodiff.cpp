#include "dsrnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dsrnet {

namespace {

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(backprop);
    return n;
}

// Parallel loops only ever partition writes by output index, so results are
// independent of the thread count.
inline int64_t C_of(const Tensor& t) { return t.dim(0); }
inline int64_t H_of(const Tensor& t) { return t.dim(1); }
inline int64_t W_of(const Tensor& t) { return t.dim(2); }

void require_chw(const Tensor& t, const char* what) {
    if (t.rank() != 3) throw ShapeError(std::string(what) + ": expected CHW tensor, got " + t.shape_str());
}

} // namespace

Var constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = false;
    return n;
}

Var leaf(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    return n;
}

void backward(const Var& root) {
    if (root->value.numel() != 1) throw ShapeError("backward: root must be a scalar");
    // iterative post-order DFS
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->requires_grad && n->backprop) n->backprop(*n);
    }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "add");
    Tensor y = a->value;
    for (int64_t i = 0; i < y.numel(); ++i) y[i] += b->value[i];
    return make_node(std::move(y), {a, b}, [](Node& n) {
        for (int k = 0; k < 2; ++k) {
            auto& p = n.parents[k];
            if (!p->requires_grad) continue;
            Tensor& g = p->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "sub");
    Tensor y = a->value;
    for (int64_t i = 0; i < y.numel(); ++i) y[i] -= b->value[i];
    return make_node(std::move(y), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) {
            Tensor& g = n.parents[0]->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
        }
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "mul");
    Tensor y = a->value;
    for (int64_t i = 0; i < y.numel(); ++i) y[i] *= b->value[i];
    return make_node(std::move(y), {a, b}, [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) {
            Tensor& g = n.parents[0]->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * bv[i];
        }
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * av[i];
        }
    });
}

Var div(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "div");
    Tensor y = a->value;
    for (int64_t i = 0; i < y.numel(); ++i) y[i] /= b->value[i];
    return make_node(std::move(y), {a, b}, [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) {
            Tensor& g = n.parents[0]->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] / bv[i];
        }
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i] * av[i] / (bv[i] * bv[i]);
        }
    });
}

// --------------------------------------------------------------------- unary

namespace {
template <typename F, typename DF>
Var unary_op(const Var& a, F f, DF dfdx_from_xy) {
    Tensor y = a->value;
    for (int64_t i = 0; i < y.numel(); ++i) y[i] = f(y[i]);
    return make_node(std::move(y), {a}, [dfdx_from_xy](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        const Tensor& x = n.parents[0]->value;
        const Tensor& y = n.value;
        Tensor& g = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * dfdx_from_xy(x[i], y[i]);
    });
}
} // namespace

Var neg(const Var& a) {
    return unary_op(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}
Var scale(const Var& a, double s) {
    return unary_op(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}
Var add_const(const Var& a, double c) {
    return unary_op(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}
Var relu(const Var& a) {
    return unary_op(a, [](double x) { return x > 0 ? x : 0.0; },
                    [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}
Var tanh_of(const Var& a) {
    return unary_op(a, [](double x) { return std::tanh(x); },
                    [](double, double y) { return 1.0 - y * y; });
}
Var sigmoid(const Var& a) {
    return unary_op(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                    [](double, double y) { return y * (1.0 - y); });
}
Var silu(const Var& a) {
    return unary_op(a, [](double x) { return x / (1.0 + std::exp(-x)); },
                    [](double x, double) {
                        double s = 1.0 / (1.0 + std::exp(-x));
                        return s * (1.0 + x * (1.0 - s));
                    });
}
Var abs_of(const Var& a) {
    return unary_op(a, [](double x) { return std::fabs(x); },
                    [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}
Var square(const Var& a) {
    return unary_op(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---------------------------------------------------------------- reductions

Var mean_all(const Var& a) {
    double m = 0.0;
    for (int64_t i = 0; i < a->value.numel(); ++i) m += a->value[i];
    const double inv_n = 1.0 / static_cast<double>(a->value.numel());
    m *= inv_n;
    return make_node(Tensor::scalar(m), {a}, [inv_n](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->ensure_grad();
        const double gv = n.grad[0] * inv_n;
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += gv;
    });
}

Var sum_all(const Var& a) {
    double m = 0.0;
    for (int64_t i = 0; i < a->value.numel(); ++i) m += a->value[i];
    return make_node(Tensor::scalar(m), {a}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->ensure_grad();
        const double gv = n.grad[0];
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += gv;
    });
}

Var scale_by(const Var& a, const Var& s) {
    if (s->value.numel() != 1) throw ShapeError("scale_by: scale must be a {1} scalar");
    Tensor y = a->value;
    const double sv = s->value[0];
    for (int64_t i = 0; i < y.numel(); ++i) y[i] *= sv;
    return make_node(std::move(y), {a, s}, [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const double sv = n.parents[1]->value[0];
        if (n.parents[0]->requires_grad) {
            Tensor& g = n.parents[0]->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * sv;
        }
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->ensure_grad();
            double acc = 0.0;
            for (int64_t i = 0; i < av.numel(); ++i) acc += n.grad[i] * av[i];
            g[0] += acc;
        }
    });
}

// ----------------------------------------------------------------- structure

Var concat_channels(const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: empty input list");
    for (const auto& x : xs) require_chw(x->value, "concat_channels");
    const int64_t H = H_of(xs[0]->value), W = W_of(xs[0]->value);
    int64_t C = 0;
    for (const auto& x : xs) {
        if (H_of(x->value) != H || W_of(x->value) != W)
            throw ShapeError("concat_channels: spatial size mismatch");
        C += C_of(x->value);
    }
    Tensor y({C, H, W});
    int64_t off = 0;
    for (const auto& x : xs) {
        std::copy(x->value.data(), x->value.data() + x->value.numel(), y.data() + off);
        off += x->value.numel();
    }
    return make_node(std::move(y), xs, [](Node& n) {
        int64_t off = 0;
        for (auto& p : n.parents) {
            const int64_t k = p->value.numel();
            if (p->requires_grad) {
                Tensor& g = p->ensure_grad();
                for (int64_t i = 0; i < k; ++i) g[i] += n.grad[off + i];
            }
            off += k;
        }
    });
}

Var slice_channels(const Var& a, int64_t c0, int64_t c1) {
    require_chw(a->value, "slice_channels");
    const int64_t C = C_of(a->value), H = H_of(a->value), W = W_of(a->value);
    if (c0 < 0 || c1 <= c0 || c1 > C) throw ShapeError("slice_channels: bad channel range");
    Tensor y({c1 - c0, H, W});
    const int64_t plane = H * W;
    std::copy(a->value.data() + c0 * plane, a->value.data() + c1 * plane, y.data());
    return make_node(std::move(y), {a}, [c0, plane](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->ensure_grad();
        const int64_t k = n.value.numel();
        for (int64_t i = 0; i < k; ++i) g[c0 * plane + i] += n.grad[i];
    });
}

// ------------------------------------------------------------------- spatial

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int groups) {
    require_chw(x->value, "conv2d");
    if (w->value.rank() != 4) throw ShapeError("conv2d: kernel must be rank 4");
    const int64_t Cin = C_of(x->value), H = H_of(x->value), W = W_of(x->value);
    const int64_t Cout = w->value.dim(0), Ck = w->value.dim(1);
    const int64_t kh = w->value.dim(2), kw = w->value.dim(3);
    if (groups < 1 || Cin % groups || Cout % groups)
        throw ShapeError("conv2d: groups must divide both channel counts");
    if (Ck != Cin / groups)
        throw ShapeError("conv2d: kernel input channels " + std::to_string(Ck) + " != " +
                         std::to_string(Cin / groups));
    if (b->value.rank() != 1 || b->value.dim(0) != Cout)
        throw ShapeError("conv2d: bias shape mismatch");
    const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho < 1 || Wo < 1) throw ShapeError("conv2d: output would be empty");

    const int64_t cin_g = Cin / groups, cout_g = Cout / groups;
    Tensor y({Cout, Ho, Wo});

    // valid output-column range for a kernel column v: 0 <= ow*s + v - p < W
    auto ow_range = [](int64_t v, int64_t p, int64_t s, int64_t W, int64_t Wo) {
        int64_t lo = v < p ? (p - v + s - 1) / s : 0;
        int64_t hi = std::min(Wo - 1, (W - 1 - v + p) / s);
        return std::pair<int64_t, int64_t>{lo, hi};
    };

    const Tensor& xv = x->value;
    const Tensor& wv = w->value;
    const Tensor& bv = b->value;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t co = 0; co < Cout; ++co) {
        const int64_t g = co / cout_g;
        double* yp = y.data() + co * Ho * Wo;
        const double bias = bv[co];
        for (int64_t i = 0; i < Ho * Wo; ++i) yp[i] = bias;
        for (int64_t ci = 0; ci < cin_g; ++ci) {
            const double* xp = xv.data() + (g * cin_g + ci) * H * W;
            const double* wk = wv.data() + (co * cin_g + ci) * kh * kw;
            // row-blocked: all kernel taps accumulate while the output row
            // stays in cache
            for (int64_t oh = 0; oh < Ho; ++oh) {
                double* yrow = yp + oh * Wo;
                for (int64_t u = 0; u < kh; ++u) {
                    const int64_t ih = oh * stride + u - pad;
                    if (ih < 0 || ih >= H) continue;
                    const double* xrow = xp + ih * W;
                    for (int64_t v = 0; v < kw; ++v) {
                        const double wv_ = wk[u * kw + v];
                        if (wv_ == 0.0) continue;
                        const auto [lo, hi] = ow_range(v, pad, stride, W, Wo);
                        const double* xr = xrow + v - pad;
                        if (stride == 1) {
                            for (int64_t ow = lo; ow <= hi; ++ow) yrow[ow] += wv_ * xr[ow];
                        } else {
                            for (int64_t ow = lo; ow <= hi; ++ow)
                                yrow[ow] += wv_ * xr[ow * stride];
                        }
                    }
                }
            }
        }
    }

    const int s = stride, p = pad;
    return make_node(std::move(y), {x, w, b}, [s, p, cin_g, cout_g, kh, kw](Node& n) {
        const Tensor& xv = n.parents[0]->value;
        const Tensor& wv = n.parents[1]->value;
        const Tensor& gy = n.grad;
        const int64_t H = H_of(xv), W = W_of(xv);
        const int64_t Ho = H_of(n.value), Wo = W_of(n.value);
        const int64_t Cin = C_of(xv);

        auto ow_range = [&](int64_t v) {
            int64_t lo = v < p ? (p - v + s - 1) / s : 0;
            int64_t hi = std::min(Wo - 1, (W - 1 - v + p) / s);
            return std::pair<int64_t, int64_t>{lo, hi};
        };

        if (n.parents[0]->requires_grad) {
            Tensor& gx = n.parents[0]->ensure_grad();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
            for (int64_t c = 0; c < Cin; ++c) {
                const int64_t g = c / cin_g, ci = c % cin_g;
                double* gxp = gx.data() + c * H * W;
                for (int64_t cg = 0; cg < cout_g; ++cg) {
                    const int64_t co = g * cout_g + cg;
                    const double* gyp = gy.data() + co * Ho * Wo;
                    const double* wk = wv.data() + (co * cin_g + ci) * kh * kw;
                    for (int64_t oh = 0; oh < Ho; ++oh) {
                        const double* gyrow = gyp + oh * Wo;
                        for (int64_t u = 0; u < kh; ++u) {
                            const int64_t ih = oh * s + u - p;
                            if (ih < 0 || ih >= H) continue;
                            double* gxrow = gxp + ih * W;
                            for (int64_t v = 0; v < kw; ++v) {
                                const double wv_ = wk[u * kw + v];
                                if (wv_ == 0.0) continue;
                                const auto [lo, hi] = ow_range(v);
                                double* gxr = gxrow + v - p;
                                if (s == 1) {
                                    for (int64_t ow = lo; ow <= hi; ++ow)
                                        gxr[ow] += wv_ * gyrow[ow];
                                } else {
                                    for (int64_t ow = lo; ow <= hi; ++ow)
                                        gxr[ow * s] += wv_ * gyrow[ow];
                                }
                            }
                        }
                    }
                }
            }
        }
        if (n.parents[1]->requires_grad) {
            Tensor& gw = n.parents[1]->ensure_grad();
            const int64_t Cout = wv.dim(0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
            for (int64_t co = 0; co < Cout; ++co) {
                const int64_t g = co / cout_g;
                const double* gyp = gy.data() + co * Ho * Wo;
                for (int64_t ci = 0; ci < cin_g; ++ci) {
                    const double* xp = xv.data() + (g * cin_g + ci) * H * W;
                    double acc[9 * 9]; // kh*kw accumulators, one pass over gy
                    const int64_t taps = kh * kw;
                    if (taps > 81) throw ConfigError("conv2d: kernel larger than 9x9");
                    for (int64_t i = 0; i < taps; ++i) acc[i] = 0.0;
                    for (int64_t oh = 0; oh < Ho; ++oh) {
                        const double* gyrow = gyp + oh * Wo;
                        for (int64_t u = 0; u < kh; ++u) {
                            const int64_t ih = oh * s + u - p;
                            if (ih < 0 || ih >= H) continue;
                            const double* xrow = xp + ih * W;
                            for (int64_t v = 0; v < kw; ++v) {
                                const auto [lo, hi] = ow_range(v);
                                const double* xr = xrow + v - p;
                                double a = 0.0;
                                if (s == 1) {
                                    for (int64_t ow = lo; ow <= hi; ++ow)
                                        a += xr[ow] * gyrow[ow];
                                } else {
                                    for (int64_t ow = lo; ow <= hi; ++ow)
                                        a += xr[ow * s] * gyrow[ow];
                                }
                                acc[u * kw + v] += a;
                            }
                        }
                    }
                    for (int64_t u = 0; u < kh; ++u)
                        for (int64_t v = 0; v < kw; ++v)
                            gw.at4(co, ci, u, v) += acc[u * kw + v];
                }
            }
        }
        if (n.parents[2]->requires_grad) {
            Tensor& gb = n.parents[2]->ensure_grad();
            const int64_t Cout = wv.dim(0);
            for (int64_t co = 0; co < Cout; ++co) {
                const double* gyp = gy.data() + co * Ho * Wo;
                double acc = 0.0;
                for (int64_t i = 0; i < Ho * Wo; ++i) acc += gyp[i];
                gb[co] += acc;
            }
        }
    });
}

Var maxpool2(const Var& x) {
    require_chw(x->value, "maxpool2");
    const int64_t C = C_of(x->value), H = H_of(x->value), W = W_of(x->value);
    const int64_t Ho = H / 2, Wo = W / 2;
    if (Ho < 1 || Wo < 1) throw ShapeError("maxpool2: input too small");
    Tensor y({C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(C * Ho * Wo));
    const Tensor& xv = x->value;
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t oh = 0; oh < Ho; ++oh) {
            for (int64_t ow = 0; ow < Wo; ++ow) {
                int64_t best = (c * H + 2 * oh) * W + 2 * ow;
                double bv = xv[best];
                for (int du = 0; du < 2; ++du)
                    for (int dv = 0; dv < 2; ++dv) {
                        const int64_t idx = (c * H + 2 * oh + du) * W + 2 * ow + dv;
                        if (xv[idx] > bv) { bv = xv[idx]; best = idx; }
                    }
                y.at(c, oh, ow) = bv;
                (*argmax)[static_cast<size_t>((c * Ho + oh) * Wo + ow)] = best;
            }
        }
    }
    return make_node(std::move(y), {x}, [argmax](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < n.value.numel(); ++i)
            g[(*argmax)[static_cast<size_t>(i)]] += n.grad[i];
    });
}

Var avgpool2_ceil(const Var& x) {
    require_chw(x->value, "avgpool2");
    const int64_t C = C_of(x->value), H = H_of(x->value), W = W_of(x->value);
    const int64_t Ho = (H + 1) / 2, Wo = (W + 1) / 2;
    Tensor y({C, Ho, Wo});
    const Tensor& xv = x->value;
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t oh = 0; oh < Ho; ++oh) {
            const int64_t h1 = std::min<int64_t>(2 * oh + 2, H);
            for (int64_t ow = 0; ow < Wo; ++ow) {
                const int64_t w1 = std::min<int64_t>(2 * ow + 2, W);
                double acc = 0.0;
                for (int64_t ih = 2 * oh; ih < h1; ++ih)
                    for (int64_t iw = 2 * ow; iw < w1; ++iw) acc += xv.at(c, ih, iw);
                y.at(c, oh, ow) = acc / static_cast<double>((h1 - 2 * oh) * (w1 - 2 * ow));
            }
        }
    }
    return make_node(std::move(y), {x}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->ensure_grad();
        const int64_t C = C_of(g), H = H_of(g), W = W_of(g);
        const int64_t Ho = H_of(n.value), Wo = W_of(n.value);
        for (int64_t c = 0; c < C; ++c) {
            for (int64_t oh = 0; oh < Ho; ++oh) {
                const int64_t h1 = std::min<int64_t>(2 * oh + 2, H);
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    const int64_t w1 = std::min<int64_t>(2 * ow + 2, W);
                    const double gv =
                        n.grad.at(c, oh, ow) / static_cast<double>((h1 - 2 * oh) * (w1 - 2 * ow));
                    for (int64_t ih = 2 * oh; ih < h1; ++ih)
                        for (int64_t iw = 2 * ow; iw < w1; ++iw) g.at(c, ih, iw) += gv;
                }
            }
        }
    });
}

Var upsample_nearest2(const Var& x) {
    require_chw(x->value, "upsample_nearest2");
    const int64_t C = C_of(x->value), H = H_of(x->value), W = W_of(x->value);
    Tensor y({C, 2 * H, 2 * W});
    const Tensor& xv = x->value;
    for (int64_t c = 0; c < C; ++c)
        for (int64_t h = 0; h < 2 * H; ++h)
            for (int64_t w = 0; w < 2 * W; ++w) y.at(c, h, w) = xv.at(c, h / 2, w / 2);
    return make_node(std::move(y), {x}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->ensure_grad();
        const int64_t C = C_of(g), H = H_of(g), W = W_of(g);
        for (int64_t c = 0; c < C; ++c)
            for (int64_t h = 0; h < 2 * H; ++h)
                for (int64_t w = 0; w < 2 * W; ++w) g.at(c, h / 2, w / 2) += n.grad.at(c, h, w);
    });
}

Var layer_norm_channels(const Var& x, const Var& gamma, const Var& beta, double eps) {
    require_chw(x->value, "layer_norm_channels");
    const int64_t C = C_of(x->value), H = H_of(x->value), W = W_of(x->value);
    if (gamma->value.numel() != C || beta->value.numel() != C)
        throw ShapeError("layer_norm_channels: scale/shift must have C entries");
    const int64_t n = H * W;
    Tensor y({C, H, W});
    auto mu = std::make_shared<std::vector<double>>(static_cast<size_t>(C));
    auto inv = std::make_shared<std::vector<double>>(static_cast<size_t>(C));
    const Tensor& xv = x->value;
    for (int64_t c = 0; c < C; ++c) {
        const double* xp = xv.data() + c * n;
        double m = 0.0;
        for (int64_t i = 0; i < n; ++i) m += xp[i];
        m /= static_cast<double>(n);
        double v = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double d = xp[i] - m;
            v += d * d;
        }
        v /= static_cast<double>(n);
        (*mu)[static_cast<size_t>(c)] = m;
        (*inv)[static_cast<size_t>(c)] = 1.0 / std::sqrt(v + eps);
        const double gc = gamma->value[c], bc = beta->value[c], ic = (*inv)[static_cast<size_t>(c)];
        double* yp = y.data() + c * n;
        for (int64_t i = 0; i < n; ++i) yp[i] = gc * (xp[i] - m) * ic + bc;
    }
    return make_node(std::move(y), {x, gamma, beta}, [mu, inv, n](Node& nd) {
        const Tensor& xv = nd.parents[0]->value;
        const Tensor& gv = nd.parents[1]->value;
        const int64_t C = C_of(xv);
        for (int64_t c = 0; c < C; ++c) {
            const double m = (*mu)[static_cast<size_t>(c)], ic = (*inv)[static_cast<size_t>(c)];
            const double* xp = xv.data() + c * n;
            const double* gyp = nd.grad.data() + c * n;
            // xhat = (x - mu) * inv
            double sum_gy = 0.0, sum_gy_xhat = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                sum_gy += gyp[i];
                sum_gy_xhat += gyp[i] * (xp[i] - m) * ic;
            }
            if (nd.parents[1]->requires_grad) nd.parents[1]->ensure_grad()[c] += sum_gy_xhat;
            if (nd.parents[2]->requires_grad) nd.parents[2]->ensure_grad()[c] += sum_gy;
            if (nd.parents[0]->requires_grad) {
                Tensor& gx = nd.parents[0]->ensure_grad();
                double* gxp = gx.data() + c * n;
                const double gc = gv[c];
                const double mean_gy = sum_gy / static_cast<double>(n);
                const double mean_gy_xhat = sum_gy_xhat / static_cast<double>(n);
                for (int64_t i = 0; i < n; ++i) {
                    const double xhat = (xp[i] - m) * ic;
                    gxp[i] += gc * ic * (gyp[i] - mean_gy - xhat * mean_gy_xhat);
                }
            }
        }
    });
}

Var global_avg_pool(const Var& x) {
    require_chw(x->value, "global_avg_pool");
    const int64_t C = C_of(x->value), n = H_of(x->value) * W_of(x->value);
    Tensor y({C, 1, 1});
    for (int64_t c = 0; c < C; ++c) {
        const double* xp = x->value.data() + c * n;
        double acc = 0.0;
        for (int64_t i = 0; i < n; ++i) acc += xp[i];
        y[c] = acc / static_cast<double>(n);
    }
    return make_node(std::move(y), {x}, [n](Node& nd) {
        if (!nd.parents[0]->requires_grad) return;
        Tensor& g = nd.parents[0]->ensure_grad();
        const int64_t C = C_of(g);
        for (int64_t c = 0; c < C; ++c) {
            const double gv = nd.grad[c] / static_cast<double>(n);
            double* gp = g.data() + c * n;
            for (int64_t i = 0; i < n; ++i) gp[i] += gv;
        }
    });
}

Var mul_channel(const Var& x, const Var& s) {
    require_chw(x->value, "mul_channel");
    const int64_t C = C_of(x->value), n = H_of(x->value) * W_of(x->value);
    if (s->value.numel() != C) throw ShapeError("mul_channel: per-channel scale size mismatch");
    Tensor y = x->value;
    for (int64_t c = 0; c < C; ++c) {
        const double sv = s->value[c];
        double* yp = y.data() + c * n;
        for (int64_t i = 0; i < n; ++i) yp[i] *= sv;
    }
    return make_node(std::move(y), {x, s}, [n](Node& nd) {
        const Tensor& xv = nd.parents[0]->value;
        const Tensor& sv = nd.parents[1]->value;
        const int64_t C = C_of(xv);
        if (nd.parents[0]->requires_grad) {
            Tensor& g = nd.parents[0]->ensure_grad();
            for (int64_t c = 0; c < C; ++c) {
                const double s = sv[c];
                double* gp = g.data() + c * n;
                const double* gyp = nd.grad.data() + c * n;
                for (int64_t i = 0; i < n; ++i) gp[i] += gyp[i] * s;
            }
        }
        if (nd.parents[1]->requires_grad) {
            Tensor& g = nd.parents[1]->ensure_grad();
            for (int64_t c = 0; c < C; ++c) {
                const double* xp = xv.data() + c * n;
                const double* gyp = nd.grad.data() + c * n;
                double acc = 0.0;
                for (int64_t i = 0; i < n; ++i) acc += gyp[i] * xp[i];
                g[c] += acc;
            }
        }
    });
}

Var affine_channel(const Var& x, std::vector<double> scale, std::vector<double> shift) {
    require_chw(x->value, "affine_channel");
    const int64_t C = C_of(x->value), n = H_of(x->value) * W_of(x->value);
    if (static_cast<int64_t>(scale.size()) != C || static_cast<int64_t>(shift.size()) != C)
        throw ShapeError("affine_channel: coefficient count mismatch");
    Tensor y = x->value;
    for (int64_t c = 0; c < C; ++c) {
        const double a = scale[static_cast<size_t>(c)], b = shift[static_cast<size_t>(c)];
        double* yp = y.data() + c * n;
        for (int64_t i = 0; i < n; ++i) yp[i] = a * yp[i] + b;
    }
    return make_node(std::move(y), {x}, [scale = std::move(scale), n](Node& nd) {
        if (!nd.parents[0]->requires_grad) return;
        Tensor& g = nd.parents[0]->ensure_grad();
        const int64_t C = C_of(g);
        for (int64_t c = 0; c < C; ++c) {
            const double a = scale[static_cast<size_t>(c)];
            double* gp = g.data() + c * n;
            const double* gyp = nd.grad.data() + c * n;
            for (int64_t i = 0; i < n; ++i) gp[i] += a * gyp[i];
        }
    });
}

Var grad_x(const Var& a) {
    require_chw(a->value, "grad_x");
    const int64_t C = C_of(a->value), H = H_of(a->value), W = W_of(a->value);
    if (W < 2) throw ShapeError("grad_x: width must be >= 2");
    Tensor y({C, H, W - 1});
    const Tensor& xv = a->value;
    for (int64_t c = 0; c < C; ++c)
        for (int64_t h = 0; h < H; ++h)
            for (int64_t w = 0; w + 1 < W; ++w)
                y.at(c, h, w) = xv.at(c, h, w + 1) - xv.at(c, h, w);
    return make_node(std::move(y), {a}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->ensure_grad();
        const int64_t C = C_of(g), H = H_of(g), W = W_of(g);
        for (int64_t c = 0; c < C; ++c)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w + 1 < W; ++w) {
                    const double gv = n.grad.at(c, h, w);
                    g.at(c, h, w + 1) += gv;
                    g.at(c, h, w) -= gv;
                }
    });
}

Var grad_y(const Var& a) {
    require_chw(a->value, "grad_y");
    const int64_t C = C_of(a->value), H = H_of(a->value), W = W_of(a->value);
    if (H < 2) throw ShapeError("grad_y: height must be >= 2");
    Tensor y({C, H - 1, W});
    const Tensor& xv = a->value;
    for (int64_t c = 0; c < C; ++c)
        for (int64_t h = 0; h + 1 < H; ++h)
            for (int64_t w = 0; w < W; ++w)
                y.at(c, h, w) = xv.at(c, h + 1, w) - xv.at(c, h, w);
    return make_node(std::move(y), {a}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->ensure_grad();
        const int64_t C = C_of(g), H = H_of(g), W = W_of(g);
        for (int64_t c = 0; c < C; ++c)
            for (int64_t h = 0; h + 1 < H; ++h)
                for (int64_t w = 0; w < W; ++w) {
                    const double gv = n.grad.at(c, h, w);
                    g.at(c, h + 1, w) += gv;
                    g.at(c, h, w) -= gv;
                }
    });
}

} // namespace dsrnet
