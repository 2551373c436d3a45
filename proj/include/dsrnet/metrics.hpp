#pragma once

#include <string>
#include <vector>

#include "dsrnet/data.hpp"
#include "dsrnet/model.hpp"
#include "dsrnet/tensor.hpp"

namespace dsrnet {

// 10*log10(1/MSE) with peak 1.0; identical images report the 100 dB cap.
double psnr(const Tensor& a, const Tensor& b);

struct SsimOptions {
    bool grayscale = false; // Rec.601 luma instead of per-channel mean
};

// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// L=1, window centers restricted to the valid interior.
double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opts = {});

struct DatasetScore {
    std::string name;
    int64_t image_count = 0;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

struct ImageScore {
    std::string dataset, id;
    double psnr = 0.0, ssim = 0.0;
};

struct EvalReport {
    std::vector<DatasetScore> datasets;
    std::vector<ImageScore> per_image;
    double weighted_psnr = 0.0;
    double weighted_ssim = 0.0;

    void write_json(const std::string& path) const;
    void write_csv(const std::string& path) const;
};

// image-count-weighted means of per-dataset means
std::pair<double, double> aggregate_scores(const std::vector<DatasetScore>& datasets);

struct NamedManifest {
    std::string name;
    DatasetManifest manifest;
};

// Inference (residue disabled) over every record, scoring the transmission
// estimate against ground truth at native size.
EvalReport evaluate(const DsrNet& model, const ParamStore& params, const VggBackbone* backbone,
                    const std::vector<NamedManifest>& manifests, const SsimOptions& opts = {});

} // namespace dsrnet
