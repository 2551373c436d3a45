#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dsrnet/rng.hpp"
#include "dsrnet/tensor.hpp"

namespace dsrnet {

// One dataset entry. Paths are stored as written; relative paths resolve
// against the manifest file's directory at load time.
struct ManifestRecord {
    std::string id;
    std::string kind; // "synthetic" | "real"
    std::string mixed_path;
    std::string t_path;
    std::optional<std::string> r_path;
    std::optional<double> gamma1, gamma2;
    std::string split = "train";
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;

    void save(const std::string& path) const; // JSON lines, one record each
    // Validates that every referenced file exists and ids are unique.
    static DatasetManifest load(const std::string& path);
};

// gamma1 * t + gamma2 * r - gamma1*gamma2 * t.*r, clamped against 1-ulp
// rounding spill; inputs and gammas must lie in [0,1].
Tensor screen_blend(const Tensor& t, const Tensor& r, double g1, double g2);

struct GammaRanges {
    double g1_lo = 0.8, g1_hi = 1.0;
    double g2_lo = 0.4, g2_hi = 1.0;
};
std::pair<double, double> sample_gammas(Rng& rng, const GammaRanges& ranges = {});

struct BlurConfig {
    bool enabled = true;
    double sigma_lo = 1.0, sigma_hi = 5.0;
};
// Gaussian-smoothed copy with sigma drawn from the configured range.
Tensor prepare_reflection(const Tensor& img, Rng& rng, const BlurConfig& cfg);

struct SyntheticPair {
    Tensor mixed, gt_t, gt_r;
    double gamma1 = 1.0, gamma2 = 1.0;
    std::string source_t, source_r;

    void validate() const; // blend identity within 1e-6, range checks
};

struct SynthesisConfig {
    int64_t crop_size = 224;
    GammaRanges gammas;
    BlurConfig blur;
    bool random_flip = true;
    std::string split = "train";
};

// Draws two distinct sources per pair, crops/flips, smooths the reflection,
// blends, writes 8-bit PNGs under out_dir and returns the manifest (gammas
// kept losslessly in the records, not re-derived from quantized pixels).
DatasetManifest build_synthetic_dataset(const std::string& source_dir, const std::string& out_dir,
                                        int64_t count, const SynthesisConfig& cfg, uint64_t seed);

// In-memory variant used by tests and by build_synthetic_dataset itself.
SyntheticPair synthesize_pair(const Tensor& src_t, const Tensor& src_r, Rng& rng,
                              const SynthesisConfig& cfg);

// Directory of `<id>_I.<ext>` mixed images with `<id>_T` transmissions and
// optional `<id>_R` reflections; unpaired or size-mismatched files raise
// IngestionError naming the offenders.
DatasetManifest load_real_pairs(const std::string& dir);

// Sorted image files directly under dir (png/jpg/jpeg/bmp).
std::vector<std::string> list_image_files(const std::string& dir);

} // namespace dsrnet
