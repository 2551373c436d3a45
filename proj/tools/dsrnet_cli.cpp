// dsrnet: synthesize / train / infer / evaluate / montage over the library.
// Exit codes: 0 success, 1 usage error, 2 resource error, 3 divergence.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "dsrnet/data.hpp"
#include "dsrnet/image_ops.hpp"
#include "dsrnet/metrics.hpp"
#include "dsrnet/model.hpp"
#include "dsrnet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dsrnet;

namespace {

std::pair<double, double> parse_range(const std::string& s, const char* what) {
    const auto pos = s.find(':');
    if (pos == std::string::npos)
        throw ConfigError(std::string(what) + ": expected lo:hi, got " + s);
    return {std::stod(s.substr(0, pos)), std::stod(s.substr(pos + 1))};
}

struct LoadedModel {
    TrainConfig cfg;
    DsrNet model;
    std::optional<VggBackbone> backbone;
    ParamStore params;
};

LoadedModel restore(const std::string& ckpt_path, const std::string& backbone_override) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    TrainConfig cfg = TrainConfig::from_json(ckpt.config_snapshot);
    ModelConfig mc = cfg.model;
    mc.with_lrm = cfg.reconstruction == ReconstructionMode::Residual;
    LoadedModel lm{cfg, DsrNet(mc), std::nullopt, std::move(ckpt.params)};
    const std::string bw = !backbone_override.empty() ? backbone_override : cfg.backbone_weights;
    if (mc.encoder != Encoder::None) {
        if (!bw.empty()) {
            lm.backbone = VggBackbone::load(bw);
        } else {
            BackboneConfig bc;
            bc.width = mc.backbone_width;
            lm.backbone = VggBackbone::seeded_random(bc, derive_seed(cfg.seed, 0xbacbe));
        }
    }
    return lm;
}

void apply_ablations(TrainConfig& cfg, const std::vector<std::string>& ablations) {
    for (const auto& a : ablations) {
        const auto pos = a.find('=');
        if (pos == std::string::npos)
            throw ConfigError("--ablate expects key=value, got " + a);
        const std::string key = a.substr(0, pos), value = a.substr(pos + 1);
        if (key == "reconstruction")
            cfg.reconstruction = reconstruction_from_string(value);
        else if (key == "interaction")
            cfg.model.interaction = interaction_from_string(value);
        else if (key == "encoder")
            cfg.model.encoder = encoder_from_string(value);
        else
            throw ConfigError("unknown ablation axis: " + key);
    }
}

// panels side by side, rows stacked, 4px white gutters
Tensor compose_grid(const std::vector<std::vector<Tensor>>& rows) {
    const int64_t gutter = 4;
    int64_t cell_h = 0, cell_w = 0;
    size_t cols = 0;
    for (const auto& row : rows) {
        cols = std::max(cols, row.size());
        for (const auto& p : row) {
            cell_h = std::max(cell_h, p.dim(1));
            cell_w = std::max(cell_w, p.dim(2));
        }
    }
    const int64_t H = static_cast<int64_t>(rows.size()) * (cell_h + gutter) + gutter;
    const int64_t W = static_cast<int64_t>(cols) * (cell_w + gutter) + gutter;
    Tensor canvas = Tensor::full({3, H, W}, 1.0);
    for (size_t r = 0; r < rows.size(); ++r)
        for (size_t c = 0; c < rows[r].size(); ++c) {
            const Tensor& p = rows[r][c];
            const int64_t y0 = gutter + static_cast<int64_t>(r) * (cell_h + gutter);
            const int64_t x0 = gutter + static_cast<int64_t>(c) * (cell_w + gutter);
            for (int64_t ch = 0; ch < 3; ++ch)
                for (int64_t y = 0; y < p.dim(1); ++y)
                    for (int64_t x = 0; x < p.dim(2); ++x)
                        canvas.at(ch, y0 + y, x0 + x) = p.at(ch, y, x);
        }
    return canvas;
}

Tensor residue_for_view(const Tensor& residue) {
    Tensor out = residue;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = (out[i] + 1.0) / 2.0;
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"DSRNet reflection separation toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "flat key=value config file; command line wins");

    // ---- synthesize ----
    auto* syn = app.add_subcommand("synthesize", "build a screen-blend synthetic dataset");
    std::string syn_source, syn_out;
    int64_t syn_count = 8, syn_crop = 224;
    uint64_t syn_seed = 0;
    bool syn_no_blur = false, syn_no_flip = false;
    std::string syn_blur_range = "1:5", syn_g1 = "0.8:1.0", syn_g2 = "0.4:1.0";
    syn->add_option("--source-dir", syn_source, "directory of natural images")->required();
    syn->add_option("--out", syn_out, "output dataset directory")->required();
    syn->add_option("--count", syn_count, "number of pairs");
    syn->add_option("--crop", syn_crop, "crop size");
    syn->add_option("--seed", syn_seed, "rng seed");
    syn->add_flag("--no-blur", syn_no_blur, "disable reflection smoothing");
    syn->add_flag("--no-flip", syn_no_flip, "disable random horizontal flips");
    syn->add_option("--blur-range", syn_blur_range, "gaussian sigma range lo:hi");
    syn->add_option("--gamma1-range", syn_g1, "transmission weakening range lo:hi");
    syn->add_option("--gamma2-range", syn_g2, "reflection weakening range lo:hi");

    // ---- train ----
    auto* tr = app.add_subcommand("train", "run the training protocol");
    TrainConfig tc;
    std::vector<std::string> tr_manifests, tr_ablate;
    std::string tr_resume, tr_backbone;
    double tr_sigma_unused = 0;
    (void)tr_sigma_unused;
    tr->add_option("--manifest", tr_manifests, "training manifest (repeatable)")->required();
    tr->add_option("--epochs", tc.max_epochs, "max epochs");
    tr->add_option("--lr", tc.learning_rate, "fixed learning rate");
    tr->add_option("--batch", tc.batch_size, "batch size");
    tr->add_option("--seed", tc.seed, "seed");
    tr->add_option("--ckpt-dir", tc.checkpoint_dir, "checkpoint directory");
    tr->add_option("--width", tc.model.base_width, "stream width");
    tr->add_option("--backbone-width", tc.model.backbone_width, "backbone base width");
    tr->add_option("--backbone-weights", tr_backbone, "backbone weights file")
        ->envname("DSRNET_BACKBONE_WEIGHTS");
    tr->add_option("--image-size", tc.image_size, "center-crop bound (0 = native)");
    tr->add_option("--alpha", tc.weights.alpha, "pixel-loss gradient weight");
    tr->add_option("--beta1", tc.weights.beta1, "perceptual weight");
    tr->add_option("--beta2", tc.weights.beta2, "exclusion weight");
    tr->add_option("--beta3", tc.weights.beta3, "reconstruction weight");
    tr->add_option("--exclusion-scales", tc.weights.exclusion_scales, "dyadic scales");
    tr->add_option("--ablate", tr_ablate,
                   "ablation toggle key=value (reconstruction|interaction|encoder)");
    tr->add_option("--resume", tr_resume, "checkpoint to resume from");
    tr->add_flag("--grad-clip", tc.grad_clip, "enable gradient norm clipping");
    tr->add_option("--grad-clip-norm", tc.grad_clip_norm, "clip threshold");

    // ---- infer ----
    auto* inf = app.add_subcommand("infer", "decompose images with a trained checkpoint");
    std::string inf_ckpt, inf_out, inf_backbone;
    std::vector<std::string> inf_inputs;
    bool inf_residue = false;
    inf->add_option("--checkpoint", inf_ckpt, "checkpoint file")->required();
    inf->add_option("--input", inf_inputs, "input image (repeatable)")->required();
    inf->add_option("--out", inf_out, "output directory (default: alongside inputs)");
    inf->add_flag("--with-residue", inf_residue, "also write the residue view");
    inf->add_option("--backbone-weights", inf_backbone, "backbone weights override")
        ->envname("DSRNET_BACKBONE_WEIGHTS");

    // ---- evaluate ----
    auto* ev = app.add_subcommand("evaluate", "score a checkpoint over manifests");
    std::string ev_ckpt, ev_out = "eval", ev_backbone, ev_aggregate_only;
    std::vector<std::string> ev_manifests;
    bool ev_gray = false;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint file");
    ev->add_option("--manifest", ev_manifests, "name=path or path (repeatable)");
    ev->add_option("--out", ev_out, "output prefix for report.json / report.csv");
    ev->add_flag("--grayscale-ssim", ev_gray, "score SSIM on luma instead of per channel");
    ev->add_option("--aggregate-only", ev_aggregate_only,
                   "JSON file of {name,image_count,mean_psnr,mean_ssim} rows; "
                   "prints the weighted average and exits");
    ev->add_option("--backbone-weights", ev_backbone, "backbone weights override")
        ->envname("DSRNET_BACKBONE_WEIGHTS");

    // ---- montage ----
    auto* mo = app.add_subcommand("montage", "side-by-side comparison image");
    std::string mo_ckpt, mo_out = "montage.png", mo_gt_dir, mo_backbone;
    std::vector<std::string> mo_inputs;
    mo->add_option("--checkpoint", mo_ckpt, "checkpoint file")->required();
    mo->add_option("--input", mo_inputs, "input image (repeatable)")->required();
    mo->add_option("--out", mo_out, "output image path");
    mo->add_option("--gt-dir", mo_gt_dir, "directory of <stem>_T ground truths");
    mo->add_option("--backbone-weights", mo_backbone, "backbone weights override")
        ->envname("DSRNET_BACKBONE_WEIGHTS");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1; // usage problems exit 1; --help stays 0
    }

    if (syn->parsed()) {
        SynthesisConfig cfg;
        cfg.crop_size = syn_crop;
        cfg.blur.enabled = !syn_no_blur;
        std::tie(cfg.blur.sigma_lo, cfg.blur.sigma_hi) = parse_range(syn_blur_range, "--blur-range");
        std::tie(cfg.gammas.g1_lo, cfg.gammas.g1_hi) = parse_range(syn_g1, "--gamma1-range");
        std::tie(cfg.gammas.g2_lo, cfg.gammas.g2_hi) = parse_range(syn_g2, "--gamma2-range");
        cfg.random_flip = !syn_no_flip;
        DatasetManifest m = build_synthetic_dataset(syn_source, syn_out, syn_count, cfg, syn_seed);
        std::cout << "wrote " << m.records.size() << " pairs under " << syn_out << " (manifest "
                  << (fs::path(syn_out) / "manifest.jsonl").string() << ")\n";
        return 0;
    }

    if (tr->parsed()) {
        tc.manifests = tr_manifests;
        tc.backbone_weights = tr_backbone;
        apply_ablations(tc, tr_ablate);
        tc.validate();
        fs::create_directories(tc.checkpoint_dir);
        const std::string cfg_path =
            (fs::path(tc.checkpoint_dir) / "effective_config.json").string();
        std::ofstream cfg_os(cfg_path);
        cfg_os << tc.to_json().dump(2) << "\n";
        std::cout << "effective config written to " << cfg_path << "\n"
                  << tc.to_json().dump(2) << "\n";
        Checkpoint final = train(tc, tr_resume, &std::cout);
        std::cout << "finished at epoch " << final.epoch << ", step " << final.step << "\n";
        return 0;
    }

    if (inf->parsed()) {
        LoadedModel lm = restore(inf_ckpt, inf_backbone);
        if (inf_residue && lm.cfg.reconstruction != ReconstructionMode::Residual)
            throw ConfigError("checkpoint was trained without the residue module");
        for (const auto& input : inf_inputs) {
            Tensor image = load_image(input);
            Decomposition d = lm.model.infer(image, lm.backbone ? &*lm.backbone : nullptr,
                                             lm.params, inf_residue);
            const fs::path in(input);
            const fs::path dir = inf_out.empty() ? in.parent_path() : fs::path(inf_out);
            if (!inf_out.empty()) fs::create_directories(dir);
            const std::string stem = in.stem().string();
            save_image_png((dir / (stem + "_T.png")).string(), d.transmission);
            save_image_png((dir / (stem + "_R.png")).string(), d.reflection);
            if (inf_residue)
                save_image_png((dir / (stem + "_residue.png")).string(),
                               residue_for_view(d.residue));
        }
        return 0;
    }

    if (ev->parsed()) {
        if (!ev_aggregate_only.empty()) {
            std::ifstream is(ev_aggregate_only);
            if (!is) throw ResourceError("cannot read " + ev_aggregate_only);
            json rows = json::parse(is);
            std::vector<DatasetScore> scores;
            for (const auto& r : rows) {
                DatasetScore s;
                s.name = r.value("name", std::string("subset"));
                s.image_count = r.at("image_count").get<int64_t>();
                s.mean_psnr = r.at("mean_psnr").get<double>();
                s.mean_ssim = r.at("mean_ssim").get<double>();
                scores.push_back(s);
            }
            auto [wp, ws] = aggregate_scores(scores);
            std::cout << json{{"weighted_psnr", wp}, {"weighted_ssim", ws}}.dump() << "\n";
            return 0;
        }
        if (ev_ckpt.empty() || ev_manifests.empty())
            throw ConfigError("evaluate needs --checkpoint and --manifest (or --aggregate-only)");
        LoadedModel lm = restore(ev_ckpt, ev_backbone);
        std::vector<NamedManifest> manifests;
        for (const auto& spec : ev_manifests) {
            const auto pos = spec.find('=');
            const std::string name =
                pos == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, pos);
            const std::string path = pos == std::string::npos ? spec : spec.substr(pos + 1);
            manifests.push_back({name, DatasetManifest::load(path)});
        }
        SsimOptions opts;
        opts.grayscale = ev_gray;
        EvalReport report = evaluate(lm.model, lm.params,
                                     lm.backbone ? &*lm.backbone : nullptr, manifests, opts);
        report.write_json(ev_out + "_report.json");
        report.write_csv(ev_out + "_report.csv");
        for (const auto& d : report.datasets)
            std::cout << d.name << ": n=" << d.image_count << " psnr=" << d.mean_psnr
                      << " ssim=" << d.mean_ssim << "\n";
        std::cout << "aggregate: psnr=" << report.weighted_psnr
                  << " ssim=" << report.weighted_ssim << "\n";
        return 0;
    }

    if (mo->parsed()) {
        LoadedModel lm = restore(mo_ckpt, mo_backbone);
        const bool with_residue = lm.cfg.reconstruction == ReconstructionMode::Residual;
        std::vector<std::vector<Tensor>> rows;
        bool any_gt_missing = false;
        for (const auto& input : mo_inputs) {
            Tensor image = load_image(input);
            Decomposition d = lm.model.infer(image, lm.backbone ? &*lm.backbone : nullptr,
                                             lm.params, with_residue);
            std::vector<Tensor> row{image, d.transmission, d.reflection};
            if (with_residue) row.push_back(residue_for_view(d.residue));
            if (!mo_gt_dir.empty()) {
                const fs::path gt =
                    fs::path(mo_gt_dir) / (fs::path(input).stem().string() + "_T.png");
                if (fs::exists(gt))
                    row.push_back(load_image(gt.string()));
                else
                    any_gt_missing = true;
            }
            rows.push_back(std::move(row));
        }
        if (mo_gt_dir.empty() || any_gt_missing)
            std::cerr << "montage layout: input | T | R"
                      << (with_residue ? " | residue" : "")
                      << (mo_gt_dir.empty() || any_gt_missing ? " (GT panel omitted)" : "")
                      << "\n";
        save_image_png(mo_out, compose_grid(rows));
        std::cout << "wrote " << mo_out << " with " << rows.size() << " rows\n";
        return 0;
    }

    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 3;
    } catch (const ResourceError& e) {
        std::cerr << "resource error: " << e.what() << "\n";
        return 2;
    } catch (const IngestionError& e) {
        std::cerr << "ingestion error: " << e.what() << "\n";
        return 2;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
