#include "doctest.h"

#include <cmath>

#include "dsrnet/data.hpp"
#include "dsrnet/image_ops.hpp"
#include "dsrnet/metrics.hpp"
#include "testutil.hpp"

using namespace dsrnet;
using testutil::TempDir;

namespace {

// Independent SSIM route: separable Gaussian moment filtering over the full
// image, then the SSIM map evaluated on the valid interior. Agrees with the
// direct per-window implementation analytically; the accumulation order is
// entirely different.
double ssim_reference(const Tensor& a, const Tensor& b) {
    const int win = 11, radius = 5;
    const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
    std::vector<double> k(win);
    double sum = 0.0;
    for (int i = 0; i < win; ++i) {
        k[i] = std::exp(-0.5 * (i - radius) * (i - radius) / (sigma * sigma));
        sum += k[i];
    }
    for (auto& v : k) v /= sum;

    const int64_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
    auto filt = [&](const std::vector<double>& src) {
        // horizontal then vertical, valid region only
        const int64_t Wv = W - 2 * radius, Hv = H - 2 * radius;
        std::vector<double> tmp(static_cast<size_t>(H * Wv)), out(static_cast<size_t>(Hv * Wv));
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < Wv; ++x) {
                double acc = 0.0;
                for (int i = 0; i < win; ++i) acc += k[i] * src[static_cast<size_t>(y * W + x + i)];
                tmp[static_cast<size_t>(y * Wv + x)] = acc;
            }
        for (int64_t y = 0; y < Hv; ++y)
            for (int64_t x = 0; x < Wv; ++x) {
                double acc = 0.0;
                for (int i = 0; i < win; ++i)
                    acc += k[i] * tmp[static_cast<size_t>((y + i) * Wv + x)];
                out[static_cast<size_t>(y * Wv + x)] = acc;
            }
        return out;
    };

    double total = 0.0;
    for (int64_t c = 0; c < C; ++c) {
        std::vector<double> pa(a.data() + c * H * W, a.data() + (c + 1) * H * W);
        std::vector<double> pb(b.data() + c * H * W, b.data() + (c + 1) * H * W);
        std::vector<double> paa(pa.size()), pbb(pa.size()), pab(pa.size());
        for (size_t i = 0; i < pa.size(); ++i) {
            paa[i] = pa[i] * pa[i];
            pbb[i] = pb[i] * pb[i];
            pab[i] = pa[i] * pb[i];
        }
        auto ma = filt(pa), mb = filt(pb), maa = filt(paa), mbb = filt(pbb), mab = filt(pab);
        double acc = 0.0;
        for (size_t i = 0; i < ma.size(); ++i) {
            const double va = maa[i] - ma[i] * ma[i];
            const double vb = mbb[i] - mb[i] * mb[i];
            const double cov = mab[i] - ma[i] * mb[i];
            acc += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) /
                   ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
        }
        total += acc / static_cast<double>(ma.size());
    }
    return total / static_cast<double>(C);
}

} // namespace

TEST_CASE("psnr closed forms and conventions") {
    Rng rng(1);
    Tensor a = rng.uniform_tensor({3, 8, 8}, 0.0, 1.0);
    CHECK(psnr(a, a) == 100.0); // identical images hit the documented cap

    Tensor b = a;
    for (int64_t i = 0; i < b.numel(); ++i) b[i] = std::clamp(a[i], 0.2, 0.9) ; // keep room
    // constant 0.1 offset -> exactly 20 dB
    Tensor base = Tensor::full({3, 8, 8}, 0.4), off = Tensor::full({3, 8, 8}, 0.5);
    CHECK(std::fabs(psnr(base, off) - 20.0) < 1e-12);

    Tensor zero({3, 8, 8}), one = Tensor::full({3, 8, 8}, 1.0);
    CHECK(psnr(zero, one) == 0.0);

    CHECK(psnr(base, off) == psnr(off, base));
    CHECK_THROWS_AS(psnr(base, Tensor({3, 8, 9})), ShapeError);
}

TEST_CASE("psnr strictly decreases with corruption amplitude") {
    Rng rng(2);
    Tensor img = testutil::procedural_image(rng, 16, 16);
    double prev = 1e9;
    for (double amp : {1e-3, 3e-3, 1e-2, 3e-2, 1e-1}) {
        Tensor noisy = img;
        for (int64_t i = 0; i < noisy.numel(); ++i)
            noisy[i] = std::clamp(noisy[i] + amp * ((i % 2) ? 1.0 : -1.0), 0.0, 1.0);
        const double v = psnr(img, noisy);
        CHECK(v < prev);
        prev = v;
    }
}

TEST_CASE("ssim identities and closed forms") {
    Rng rng(3);
    Tensor a = testutil::procedural_image(rng, 24, 24);
    CHECK(ssim(a, a) == 1.0);

    // zero-variance closed form: (2*0.08 + 1e-4) / (0.2 + 1e-4)
    Tensor ca = Tensor::full({3, 16, 16}, 0.2), cb = Tensor::full({3, 16, 16}, 0.4);
    const double expect = (2.0 * 0.2 * 0.4 + 1e-4) / (0.2 * 0.2 + 0.4 * 0.4 + 1e-4);
    CHECK(std::fabs(ssim(ca, cb) - expect) < 1e-9);

    CHECK_THROWS_AS(ssim(Tensor({3, 10, 12}), Tensor({3, 10, 12})), ShapeError);
    CHECK_THROWS_AS(ssim(a, Tensor({3, 24, 25})), ShapeError);
}

TEST_CASE("ssim agrees with the separable reference implementation") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = testutil::procedural_image(rng, 20, 26);
        Tensor b = testutil::procedural_image(rng, 20, 26);
        const double mine = ssim(a, b);
        const double ref = ssim_reference(a, b);
        CHECK(std::fabs(mine - ref) < 1e-4);
        CHECK(std::fabs(ssim(a, b) - ssim(b, a)) < 1e-15);
        CHECK(mine >= -1.0);
        CHECK(mine <= 1.0);
    }
}

TEST_CASE("grayscale ssim mode stays within bounds and hits 1 on identity") {
    Rng rng(5);
    Tensor a = testutil::procedural_image(rng, 16, 16);
    SsimOptions gray;
    gray.grayscale = true;
    CHECK(ssim(a, a, gray) == 1.0);
    Tensor b = testutil::procedural_image(rng, 16, 16);
    const double v = ssim(a, b, gray);
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
}

TEST_CASE("aggregation reproduces the published weighted average") {
    std::vector<DatasetScore> rows = {
        {"Real20", 20, 24.23, 0.820},
        {"Objects", 200, 26.28, 0.914},
        {"Postcard", 199, 24.56, 0.908},
        {"Wild", 55, 25.68, 0.896},
    };
    auto [wp, ws] = aggregate_scores(rows);
    CHECK(std::fabs(wp - 25.40) < 0.005); // 25.40 to two decimals
    CHECK(std::fabs(ws - 0.905) < 0.0005);

    auto [sp, ss] = aggregate_scores({rows[0]});
    CHECK(sp == rows[0].mean_psnr);
    CHECK(ss == rows[0].mean_ssim);

    CHECK_THROWS_AS(aggregate_scores({}), DomainError);
}

TEST_CASE("evaluate walks manifests, scores rows, and writes reports") {
    // tiny encoder-free model so no backbone is needed
    ModelConfig mc;
    mc.base_width = 4;
    mc.encoder = Encoder::None;
    mc.with_lrm = true;
    DsrNet model(mc);
    ParamStore params = model.init_params(3);

    TempDir dir("eval");
    Rng rng(6);
    DatasetManifest manifest;
    for (int i = 0; i < 3; ++i) {
        Tensor img = testutil::procedural_image(rng, 32, 32);
        Tensor gt = testutil::procedural_image(rng, 32, 32);
        ManifestRecord rec;
        rec.id = "img" + std::to_string(i);
        rec.kind = "real";
        rec.mixed_path = dir.file(rec.id + "_I.png");
        rec.t_path = dir.file(rec.id + "_T.png");
        save_image_png(rec.mixed_path, img);
        save_image_png(rec.t_path, gt);
        manifest.records.push_back(rec);
    }

    EvalReport report = evaluate(model, params, nullptr, {{"toy", manifest}});
    REQUIRE(report.datasets.size() == 1);
    CHECK(report.datasets[0].image_count == 3);
    CHECK(report.per_image.size() == 3);

    // aggregate equals the independently recomputed weighted mean
    double mean = 0.0;
    for (const auto& row : report.per_image) mean += row.psnr;
    mean /= 3.0;
    CHECK(report.weighted_psnr == doctest::Approx(mean).epsilon(1e-12));

    report.write_json(dir.file("report.json"));
    report.write_csv(dir.file("report.csv"));
    CHECK(std::filesystem::exists(dir.file("report.json")));
    CHECK(std::filesystem::exists(dir.file("report.csv")));

    CHECK_THROWS_AS(evaluate(model, params, nullptr, {}), DomainError);
    CHECK_THROWS_AS(evaluate(model, params, nullptr, {{"empty", DatasetManifest{}}}),
                    DomainError);
}
