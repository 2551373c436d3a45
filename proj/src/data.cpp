#include "dsrnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "dsrnet/errors.hpp"
#include "dsrnet/image_ops.hpp"

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dsrnet {

void DatasetManifest::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw ResourceError("cannot write manifest: " + path);
    for (const auto& r : records) {
        json j{{"id", r.id},
               {"kind", r.kind},
               {"mixed_path", r.mixed_path},
               {"t_path", r.t_path},
               {"split", r.split}};
        if (r.r_path) j["r_path"] = *r.r_path;
        if (r.gamma1) j["gamma1"] = *r.gamma1;
        if (r.gamma2) j["gamma2"] = *r.gamma2;
        os << j.dump() << "\n";
    }
}

DatasetManifest DatasetManifest::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ResourceError("cannot read manifest: " + path);
    const fs::path base = fs::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        fs::path fp(p);
        return fp.is_absolute() ? fp.string() : (base / fp).string();
    };
    DatasetManifest m;
    std::set<std::string> ids;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw IngestionError("manifest " + path + " line " + std::to_string(lineno) + ": " +
                                 e.what());
        }
        ManifestRecord r;
        r.id = j.at("id").get<std::string>();
        r.kind = j.at("kind").get<std::string>();
        r.mixed_path = resolve(j.at("mixed_path").get<std::string>());
        r.t_path = resolve(j.at("t_path").get<std::string>());
        if (j.contains("r_path")) r.r_path = resolve(j["r_path"].get<std::string>());
        if (j.contains("gamma1")) r.gamma1 = j["gamma1"].get<double>();
        if (j.contains("gamma2")) r.gamma2 = j["gamma2"].get<double>();
        r.split = j.value("split", "train");
        if (!ids.insert(r.id).second)
            throw IngestionError("manifest " + path + ": duplicate record id " + r.id);
        for (const std::string& p : {r.mixed_path, r.t_path})
            if (!fs::exists(p))
                throw IngestionError("manifest " + path + ": missing file " + p);
        if (r.r_path && !fs::exists(*r.r_path))
            throw IngestionError("manifest " + path + ": missing file " + *r.r_path);
        m.records.push_back(std::move(r));
    }
    return m;
}

Tensor screen_blend(const Tensor& t, const Tensor& r, double g1, double g2) {
    require_same_shape(t, r, "screen_blend");
    if (g1 < 0.0 || g1 > 1.0 || g2 < 0.0 || g2 > 1.0)
        throw DomainError("screen_blend: gamma coefficients must lie in [0,1]");
    Tensor out(t.shape());
    for (int64_t i = 0; i < t.numel(); ++i) {
        const double tv = t[i], rv = r[i];
        if (tv < 0.0 || tv > 1.0 || rv < 0.0 || rv > 1.0)
            throw DomainError("screen_blend: image values must lie in [0,1]");
        out[i] = std::clamp(g1 * tv + g2 * rv - g1 * g2 * tv * rv, 0.0, 1.0);
    }
    return out;
}

std::pair<double, double> sample_gammas(Rng& rng, const GammaRanges& ranges) {
    const double g1 = rng.uniform(ranges.g1_lo, ranges.g1_hi);
    const double g2 = rng.uniform(ranges.g2_lo, ranges.g2_hi);
    return {g1, g2};
}

Tensor prepare_reflection(const Tensor& img, Rng& rng, const BlurConfig& cfg) {
    if (!cfg.enabled) return img;
    if (cfg.sigma_lo <= 0.0 || cfg.sigma_hi < cfg.sigma_lo)
        throw ConfigError("prepare_reflection: blur sigma range must be positive");
    const double sigma = rng.uniform(cfg.sigma_lo, cfg.sigma_hi);
    return gaussian_blur(img, sigma);
}

void SyntheticPair::validate() const {
    require_same_shape(mixed, gt_t, "synthetic pair");
    require_same_shape(mixed, gt_r, "synthetic pair");
    if (gamma1 < 0.8 - 1e-12 || gamma1 > 1.0 + 1e-12 || gamma2 < 0.4 - 1e-12 ||
        gamma2 > 1.0 + 1e-12)
        throw DomainError("synthetic pair: gamma outside the declared ranges");
    for (int64_t i = 0; i < mixed.numel(); ++i) {
        if (mixed[i] < 0.0 || mixed[i] > 1.0)
            throw DomainError("synthetic pair: mixed image outside [0,1]");
        const double expect =
            gamma1 * gt_t[i] + gamma2 * gt_r[i] - gamma1 * gamma2 * gt_t[i] * gt_r[i];
        if (std::fabs(mixed[i] - expect) > 1e-6)
            throw DomainError("synthetic pair: blend identity violated");
    }
}

namespace {

Tensor random_crop_to(const Tensor& img, int64_t size, Rng& rng, bool flip_allowed,
                      const SynthesisConfig& cfg) {
    Tensor cur = img;
    if (cur.dim(1) < size || cur.dim(2) < size) {
        const double sh = static_cast<double>(size) / static_cast<double>(cur.dim(1));
        const double sw = static_cast<double>(size) / static_cast<double>(cur.dim(2));
        const double s = std::max(sh, sw);
        cur = resize(cur, static_cast<int64_t>(std::ceil(s * static_cast<double>(cur.dim(1)))),
                     static_cast<int64_t>(std::ceil(s * static_cast<double>(cur.dim(2)))));
        cur = clamp01(cur);
    }
    const int64_t top = rng.below(cur.dim(1) - size + 1);
    const int64_t left = rng.below(cur.dim(2) - size + 1);
    cur = crop(cur, top, left, size, size);
    if (flip_allowed && cfg.random_flip && rng.uniform() < 0.5) cur = hflip(cur);
    return cur;
}

} // namespace

SyntheticPair synthesize_pair(const Tensor& src_t, const Tensor& src_r, Rng& rng,
                              const SynthesisConfig& cfg) {
    SyntheticPair pair;
    pair.gt_t = random_crop_to(src_t, cfg.crop_size, rng, true, cfg);
    Tensor r_crop = random_crop_to(src_r, cfg.crop_size, rng, true, cfg);
    pair.gt_r = clamp01(prepare_reflection(r_crop, rng, cfg.blur));
    auto [g1, g2] = sample_gammas(rng, cfg.gammas);
    pair.gamma1 = g1;
    pair.gamma2 = g2;
    pair.mixed = screen_blend(pair.gt_t, pair.gt_r, g1, g2);
    return pair;
}

std::vector<std::string> list_image_files(const std::string& dir) {
    if (!fs::is_directory(dir)) throw ResourceError("not a directory: " + dir);
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp")
            files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    return files;
}

DatasetManifest build_synthetic_dataset(const std::string& source_dir, const std::string& out_dir,
                                        int64_t count, const SynthesisConfig& cfg,
                                        uint64_t seed) {
    if (count < 1) throw ConfigError("build_synthetic_dataset: count must be >= 1");
    const auto sources = list_image_files(source_dir);
    if (sources.size() < 2)
        throw ResourceError("build_synthetic_dataset: need at least 2 source images in " +
                            source_dir);
    fs::create_directories(out_dir);

    Rng rng(seed);
    DatasetManifest manifest;
    for (int64_t k = 0; k < count; ++k) {
        const int64_t it = rng.below(static_cast<int64_t>(sources.size()));
        int64_t ir = rng.below(static_cast<int64_t>(sources.size()) - 1);
        if (ir >= it) ++ir; // distinct sources per pair
        SyntheticPair pair = synthesize_pair(load_image(sources[static_cast<size_t>(it)]),
                                             load_image(sources[static_cast<size_t>(ir)]), rng,
                                             cfg);
        pair.source_t = sources[static_cast<size_t>(it)];
        pair.source_r = sources[static_cast<size_t>(ir)];
        pair.validate();

        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "syn%06lld", static_cast<long long>(k));
        const std::string id(idbuf);
        ManifestRecord rec;
        rec.id = id;
        rec.kind = "synthetic";
        rec.mixed_path = id + "_I.png";
        rec.t_path = id + "_T.png";
        rec.r_path = id + "_R.png";
        rec.gamma1 = pair.gamma1;
        rec.gamma2 = pair.gamma2;
        rec.split = cfg.split;
        save_image_png((fs::path(out_dir) / rec.mixed_path).string(), pair.mixed);
        save_image_png((fs::path(out_dir) / rec.t_path).string(), pair.gt_t);
        save_image_png((fs::path(out_dir) / *rec.r_path).string(), pair.gt_r);
        manifest.records.push_back(std::move(rec));
    }
    manifest.save((fs::path(out_dir) / "manifest.jsonl").string());
    return DatasetManifest::load((fs::path(out_dir) / "manifest.jsonl").string());
}

DatasetManifest load_real_pairs(const std::string& dir) {
    if (!fs::is_directory(dir)) throw ResourceError("not a directory: " + dir);
    struct Entry {
        std::string mixed, t, r;
    };
    std::map<std::string, Entry> entries;
    for (const auto& f : list_image_files(dir)) {
        const std::string stem = fs::path(f).stem().string();
        if (stem.size() < 3) continue;
        const std::string base = stem.substr(0, stem.size() - 2);
        const std::string suffix = stem.substr(stem.size() - 2);
        if (suffix == "_I")
            entries[base].mixed = f;
        else if (suffix == "_T")
            entries[base].t = f;
        else if (suffix == "_R")
            entries[base].r = f;
    }
    std::vector<std::string> offenders;
    DatasetManifest manifest;
    for (const auto& [base, e] : entries) {
        if (e.mixed.empty() || e.t.empty()) {
            offenders.push_back(base);
            continue;
        }
        Tensor mixed = load_image(e.mixed);
        Tensor t = load_image(e.t);
        if (!mixed.same_shape(t))
            throw IngestionError("real pair " + base + ": size mismatch between " + e.mixed +
                                 " and " + e.t);
        if (!e.r.empty()) {
            Tensor r = load_image(e.r);
            if (!mixed.same_shape(r))
                throw IngestionError("real pair " + base + ": size mismatch between " + e.mixed +
                                     " and " + e.r);
        }
        ManifestRecord rec;
        rec.id = base;
        rec.kind = "real";
        rec.mixed_path = e.mixed;
        rec.t_path = e.t;
        if (!e.r.empty()) rec.r_path = e.r;
        rec.split = "train";
        manifest.records.push_back(std::move(rec));
    }
    if (!offenders.empty()) {
        std::string msg = "unpaired files in " + dir + ":";
        for (const auto& o : offenders) msg += " " + o;
        throw IngestionError(msg);
    }
    return manifest;
}

} // namespace dsrnet
