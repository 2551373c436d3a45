#pragma once

// Shared helpers for the test suites: finite-difference gradient oracles and
// procedural test images (no external data in the sandbox).

#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dsrnet/autodiff.hpp"
#include "dsrnet/rng.hpp"
#include "dsrnet/tensor.hpp"

namespace testutil {

using dsrnet::Rng;
using dsrnet::Tensor;
using dsrnet::Var;

// Central finite differences of a scalar function of one tensor argument.
inline Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                          double h) {
    Tensor g(x.shape());
    Tensor xp = x;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double orig = xp[i];
        xp[i] = orig + h;
        const double fp = f(xp);
        xp[i] = orig - h;
        const double fm = f(xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// max over entries of |a-b| / max(1, |a|, |b|)
inline double max_rel_err(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double denom = std::max({1.0, std::fabs(a[i]), std::fabs(b[i])});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
    }
    return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
    return worst;
}

// Smooth multi-frequency pattern in [0,1]: sinusoid mixtures plus a few soft
// rectangles, enough texture for metric and training exercises.
inline Tensor procedural_image(Rng& rng, int64_t h, int64_t w) {
    Tensor img({3, h, w});
    const double fx1 = rng.uniform(1.0, 4.0), fy1 = rng.uniform(1.0, 4.0);
    const double fx2 = rng.uniform(4.0, 9.0), fy2 = rng.uniform(4.0, 9.0);
    const double ph1 = rng.uniform(0.0, 6.28), ph2 = rng.uniform(0.0, 6.28);
    double base[3], amp[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = rng.uniform(0.25, 0.75);
        amp[c] = rng.uniform(0.1, 0.22);
    }
    for (int c = 0; c < 3; ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                const double u = static_cast<double>(x) / static_cast<double>(w);
                const double v = static_cast<double>(y) / static_cast<double>(h);
                double val = base[c] + amp[c] * std::sin(6.28 * (fx1 * u + fy1 * v) + ph1 + c) +
                             amp[c] * 0.6 * std::cos(6.28 * (fx2 * u - fy2 * v) + ph2 - c);
                img.at(c, y, x) = std::min(1.0, std::max(0.0, val));
            }
    const int nrect = 2 + static_cast<int>(rng.below(3));
    for (int k = 0; k < nrect; ++k) {
        const int64_t x0 = rng.below(w), y0 = rng.below(h);
        const int64_t rw = 2 + rng.below(std::max<int64_t>(2, w / 3));
        const int64_t rh = 2 + rng.below(std::max<int64_t>(2, h / 3));
        double tint[3] = {rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)};
        for (int64_t y = y0; y < std::min(h, y0 + rh); ++y)
            for (int64_t x = x0; x < std::min(w, x0 + rw); ++x)
                for (int c = 0; c < 3; ++c)
                    img.at(c, y, x) = 0.5 * img.at(c, y, x) + 0.5 * tint[c];
    }
    return img;
}

// Unique scratch directory under the system temp root; removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<uint64_t> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("dsrnet_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter.fetch_add(1)));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::string str() const { return path_.string(); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

} // namespace testutil
