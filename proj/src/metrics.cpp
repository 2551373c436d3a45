#include "dsrnet/metrics.hpp"

#include <cmath>
#include <fstream>

#include "dsrnet/errors.hpp"
#include "dsrnet/image_ops.hpp"

#include "json.hpp"

namespace dsrnet {

double psnr(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse <= 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr int kWin = 11;
constexpr int kRadius = kWin / 2;
constexpr double kC1 = 0.01 * 0.01; // (K1*L)^2
constexpr double kC2 = 0.03 * 0.03; // (K2*L)^2

const std::vector<double>& gaussian_window() {
    static const std::vector<double> win = [] {
        std::vector<double> w(kWin * kWin);
        const double sigma = 1.5;
        double sum = 0.0;
        for (int y = 0; y < kWin; ++y)
            for (int x = 0; x < kWin; ++x) {
                const double dy = y - kRadius, dx = x - kRadius;
                const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                w[y * kWin + x] = v;
                sum += v;
            }
        for (auto& v : w) v /= sum;
        return w;
    }();
    return win;
}

// single-channel SSIM over valid window positions
double ssim_plane(const double* a, const double* b, int64_t h, int64_t w) {
    const auto& win = gaussian_window();
    double acc = 0.0;
    int64_t count = 0;
    for (int64_t cy = kRadius; cy < h - kRadius; ++cy) {
        for (int64_t cx = kRadius; cx < w - kRadius; ++cx) {
            double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
            for (int y = 0; y < kWin; ++y)
                for (int x = 0; x < kWin; ++x) {
                    const double wv = win[y * kWin + x];
                    const double av = a[(cy + y - kRadius) * w + (cx + x - kRadius)];
                    const double bv = b[(cy + y - kRadius) * w + (cx + x - kRadius)];
                    mx += wv * av;
                    my += wv * bv;
                    sxx += wv * av * av;
                    syy += wv * bv * bv;
                    sxy += wv * av * bv;
                }
            const double vx = sxx - mx * mx;
            const double vy = syy - my * my;
            const double cxy = sxy - mx * my;
            const double s = ((2.0 * mx * my + kC1) * (2.0 * cxy + kC2)) /
                             ((mx * mx + my * my + kC1) * (vx + vy + kC2));
            acc += s;
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

Tensor to_luma(const Tensor& img) {
    Tensor out({1, img.dim(1), img.dim(2)});
    for (int64_t y = 0; y < img.dim(1); ++y)
        for (int64_t x = 0; x < img.dim(2); ++x)
            out.at(0, y, x) =
                0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
    return out;
}

} // namespace

double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opts) {
    require_same_shape(a, b, "ssim");
    if (a.rank() != 3) throw ShapeError("ssim: expected (C,H,W) images");
    if (a.dim(1) < kWin || a.dim(2) < kWin)
        throw ShapeError("ssim: image smaller than the 11x11 window");
    if (opts.grayscale) {
        Tensor la = to_luma(a), lb = to_luma(b);
        return ssim_plane(la.data(), lb.data(), la.dim(1), la.dim(2));
    }
    const int64_t plane = a.dim(1) * a.dim(2);
    double acc = 0.0;
    for (int64_t c = 0; c < a.dim(0); ++c)
        acc += ssim_plane(a.data() + c * plane, b.data() + c * plane, a.dim(1), a.dim(2));
    return acc / static_cast<double>(a.dim(0));
}

std::pair<double, double> aggregate_scores(const std::vector<DatasetScore>& datasets) {
    double psnr_sum = 0.0, ssim_sum = 0.0;
    int64_t count = 0;
    for (const auto& d : datasets) {
        psnr_sum += static_cast<double>(d.image_count) * d.mean_psnr;
        ssim_sum += static_cast<double>(d.image_count) * d.mean_ssim;
        count += d.image_count;
    }
    if (count == 0) throw DomainError("aggregate_scores: no images");
    return {psnr_sum / static_cast<double>(count), ssim_sum / static_cast<double>(count)};
}

void EvalReport::write_json(const std::string& path) const {
    nlohmann::json j;
    j["datasets"] = nlohmann::json::array();
    for (const auto& d : datasets)
        j["datasets"].push_back({{"name", d.name},
                                 {"image_count", d.image_count},
                                 {"mean_psnr", d.mean_psnr},
                                 {"mean_ssim", d.mean_ssim}});
    j["aggregate"] = {{"weighted_psnr", weighted_psnr}, {"weighted_ssim", weighted_ssim}};
    j["per_image"] = nlohmann::json::array();
    for (const auto& r : per_image)
        j["per_image"].push_back(
            {{"dataset", r.dataset}, {"id", r.id}, {"psnr", r.psnr}, {"ssim", r.ssim}});
    std::ofstream os(path);
    if (!os) throw ResourceError("cannot write report: " + path);
    os << j.dump(2) << "\n";
}

void EvalReport::write_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw ResourceError("cannot write report: " + path);
    os << "dataset,id,psnr,ssim\n";
    for (const auto& r : per_image) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f", r.psnr, r.ssim);
        os << r.dataset << "," << r.id << "," << buf << "\n";
    }
}

EvalReport evaluate(const DsrNet& model, const ParamStore& params, const VggBackbone* backbone,
                    const std::vector<NamedManifest>& manifests, const SsimOptions& opts) {
    if (manifests.empty()) throw DomainError("evaluate: no manifests given");
    EvalReport report;
    for (const auto& nm : manifests) {
        if (nm.manifest.records.empty())
            throw DomainError("evaluate: manifest " + nm.name + " is empty");
        DatasetScore score;
        score.name = nm.name;
        for (const auto& rec : nm.manifest.records) {
            Tensor mixed = load_image(rec.mixed_path);
            Tensor gt_t = load_image(rec.t_path);
            require_same_shape(mixed, gt_t, "evaluate");
            // residue discarded at test time
            Decomposition d = model.infer(mixed, backbone, params, /*with_residue=*/false);
            ImageScore row;
            row.dataset = nm.name;
            row.id = rec.id;
            row.psnr = psnr(d.transmission, gt_t);
            row.ssim = ssim(d.transmission, gt_t, opts);
            score.mean_psnr += row.psnr;
            score.mean_ssim += row.ssim;
            ++score.image_count;
            report.per_image.push_back(std::move(row));
        }
        score.mean_psnr /= static_cast<double>(score.image_count);
        score.mean_ssim /= static_cast<double>(score.image_count);
        report.datasets.push_back(std::move(score));
    }
    auto [wp, ws] = aggregate_scores(report.datasets);
    report.weighted_psnr = wp;
    report.weighted_ssim = ws;
    return report;
}

} // namespace dsrnet
