#include "dsrnet/train.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "dsrnet/image_ops.hpp"
#include "dsrnet/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dsrnet {

void TrainConfig::validate() const {
    if (learning_rate < 0.0) throw ConfigError("learning rate must be >= 0");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max epochs must be >= 1");
    if (image_size < 0) throw ConfigError("image size must be >= 0");
    if (feature_cache_entries < 0) throw ConfigError("feature cache size must be >= 0");
    weights.validate();
    model.validate();
}

json TrainConfig::to_json() const {
    json w{{"alpha", weights.alpha},
           {"beta1", weights.beta1},
           {"beta2", weights.beta2},
           {"beta3", weights.beta3},
           {"omega", weights.omega},
           {"exclusion_scales", weights.exclusion_scales},
           {"eta_mode", weights.eta.mode == EtaPolicy::Mode::Balanced ? "balanced" : "fixed"},
           {"eta1", weights.eta.eta1},
           {"eta2", weights.eta.eta2}};
    return {{"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"seed", seed},
            {"weights", w},
            {"reconstruction", dsrnet::to_string(reconstruction)},
            {"model", model.to_json()},
            {"manifests", manifests},
            {"checkpoint_dir", checkpoint_dir},
            {"backbone_weights", backbone_weights},
            {"image_size", image_size},
            {"grad_clip", grad_clip},
            {"grad_clip_norm", grad_clip_norm},
            {"feature_cache_entries", feature_cache_entries}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig cfg;
    cfg.learning_rate = j.value("learning_rate", 1e-4);
    cfg.batch_size = j.value("batch_size", int64_t{1});
    cfg.max_epochs = j.value("max_epochs", int64_t{20});
    cfg.seed = j.value("seed", uint64_t{0});
    if (j.contains("weights")) {
        const json& w = j["weights"];
        cfg.weights.alpha = w.value("alpha", 2.0);
        cfg.weights.beta1 = w.value("beta1", 0.01);
        cfg.weights.beta2 = w.value("beta2", 1.0);
        cfg.weights.beta3 = w.value("beta3", 0.2);
        if (w.contains("omega")) cfg.weights.omega = w["omega"].get<std::array<double, 5>>();
        cfg.weights.exclusion_scales = w.value("exclusion_scales", 3);
        cfg.weights.eta.mode = w.value("eta_mode", std::string("balanced")) == "fixed"
                                   ? EtaPolicy::Mode::Fixed
                                   : EtaPolicy::Mode::Balanced;
        cfg.weights.eta.eta1 = w.value("eta1", 1.0);
        cfg.weights.eta.eta2 = w.value("eta2", 1.0);
    }
    cfg.reconstruction = reconstruction_from_string(j.value("reconstruction", std::string("residual")));
    if (j.contains("model")) cfg.model = ModelConfig::from_json(j["model"]);
    cfg.manifests = j.value("manifests", std::vector<std::string>{});
    cfg.checkpoint_dir = j.value("checkpoint_dir", std::string("checkpoints"));
    cfg.backbone_weights = j.value("backbone_weights", std::string(""));
    cfg.image_size = j.value("image_size", int64_t{224});
    cfg.grad_clip = j.value("grad_clip", false);
    cfg.grad_clip_norm = j.value("grad_clip_norm", 1.0);
    cfg.feature_cache_entries = j.value("feature_cache_entries", int64_t{16});
    cfg.validate();
    return cfg;
}

namespace {
constexpr char kCkptMagic[8] = {'D', 'S', 'R', 'N', 'C', 'K', 'P', '1'};
constexpr uint32_t kCkptVersion = 1;
} // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ResourceError("cannot write checkpoint: " + path);
    os.write(kCkptMagic, 8);
    io::write_u32(os, ckpt.version);
    io::write_string(os, ckpt.config_snapshot.dump());
    io::write_i64(os, ckpt.epoch);
    io::write_i64(os, ckpt.step);
    ckpt.params.write(os);
    ckpt.adam_m.write(os);
    ckpt.adam_v.write(os);
    io::write_i64(os, ckpt.adam_step);
    if (!os) throw ResourceError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ResourceError("cannot read checkpoint: " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kCkptMagic, 8) != 0)
        throw CheckpointError("not a checkpoint file: " + path);
    Checkpoint ckpt;
    ckpt.version = io::read_u32(is);
    if (ckpt.version != kCkptVersion)
        throw CheckpointError("incompatible checkpoint version " + std::to_string(ckpt.version) +
                              " (expected " + std::to_string(kCkptVersion) + ")");
    try {
        ckpt.config_snapshot = json::parse(io::read_string(is));
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint config block: ") + e.what());
    }
    ckpt.epoch = io::read_i64(is);
    ckpt.step = io::read_i64(is);
    ckpt.params = ParamStore::read(is);
    ckpt.adam_m = ParamStore::read(is);
    ckpt.adam_v = ParamStore::read(is);
    ckpt.adam_step = io::read_i64(is);
    if (!ckpt.params.same_layout(ckpt.adam_m) || !ckpt.params.same_layout(ckpt.adam_v))
        throw CheckpointError("corrupt checkpoint: optimizer state does not match parameters");
    return ckpt;
}

Sample load_sample(const ManifestRecord& rec, int64_t image_size) {
    Sample s;
    s.id = rec.id;
    Tensor mixed = load_image(rec.mixed_path);
    Tensor gt_t = load_image(rec.t_path);
    require_same_shape(mixed, gt_t, "load_sample");
    std::optional<Tensor> gt_r;
    if (rec.r_path) {
        gt_r = load_image(*rec.r_path);
        require_same_shape(mixed, *gt_r, "load_sample");
    }
    if (image_size > 0) {
        mixed = center_crop_max(mixed, image_size, image_size);
        gt_t = center_crop_max(gt_t, image_size, image_size);
        if (gt_r) *gt_r = center_crop_max(*gt_r, image_size, image_size);
    }
    int64_t ph = 0, pw = 0;
    s.mixed = pad_reflect_to_multiple(mixed, 16, ph, pw);
    s.gt_t = pad_reflect_to_multiple(gt_t, 16, ph, pw);
    if (gt_r) s.gt_r = pad_reflect_to_multiple(*gt_r, 16, ph, pw);
    return s;
}

namespace {

ModelConfig effective_model_config(const TrainConfig& cfg) {
    ModelConfig m = cfg.model;
    // the residue module only exists when the residual criterion trains it
    m.with_lrm = cfg.reconstruction == ReconstructionMode::Residual;
    return m;
}

} // namespace

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_(cfg), model_(effective_model_config(cfg)), params_(model_.init_params(cfg.seed)) {
    cfg_.validate();
    adam_m_ = params_.zeros_like();
    adam_v_ = params_.zeros_like();
    build_backbone();
}

Trainer::Trainer(const TrainConfig& cfg, const Checkpoint& resume)
    : cfg_(cfg), model_(effective_model_config(cfg)), params_(resume.params),
      adam_m_(resume.adam_m), adam_v_(resume.adam_v), adam_step_(resume.adam_step),
      steps_done_(resume.step) {
    cfg_.validate();
    ParamStore expected = model_.init_params(cfg.seed);
    if (!expected.same_layout(params_))
        throw CheckpointError("checkpoint parameters do not match the configured model");
    build_backbone();
}

void Trainer::build_backbone() {
    const bool needed = cfg_.model.encoder != Encoder::None || cfg_.weights.beta1 != 0.0;
    if (!needed) return;
    if (!cfg_.backbone_weights.empty()) {
        backbone_ = VggBackbone::load(cfg_.backbone_weights);
        if (backbone_->config().width != cfg_.model.backbone_width)
            throw ConfigError("backbone weights width " +
                              std::to_string(backbone_->config().width) +
                              " does not match configured " +
                              std::to_string(cfg_.model.backbone_width));
    } else {
        BackboneConfig bc;
        bc.width = cfg_.model.backbone_width;
        backbone_ = VggBackbone::seeded_random(bc, derive_seed(cfg_.seed, 0xbacbe));
    }
}

const std::vector<Tensor>* Trainer::cached(std::map<std::string, std::vector<Tensor>>& cache,
                                           const std::string& key, const Tensor& image,
                                           const std::vector<int>& taps) {
    if (!backbone_) return nullptr;
    auto it = cache.find(key);
    if (it != cache.end()) return &it->second;
    if (cfg_.feature_cache_entries == 0) return nullptr;
    if (static_cast<int64_t>(cache.size()) >= cfg_.feature_cache_entries)
        cache.clear(); // tiny datasets only; wholesale reset keeps it simple
    auto vars = backbone_->forward_taps(constant(image), taps);
    std::vector<Tensor> values;
    values.reserve(vars.size());
    for (const auto& v : vars) values.push_back(v->value);
    auto [pos, _] = cache.emplace(key, std::move(values));
    return &pos->second;
}

LossBreakdown Trainer::step(const std::vector<Sample>& batch) {
    if (batch.empty()) throw ConfigError("training step needs at least one sample");
    for (const auto& [name, t] : params_.items())
        if (!t.all_finite())
            throw DivergenceError("parameter " + name + " is no longer finite", {});

    BoundParams bp(params_);
    const bool with_residue = cfg_.reconstruction == ReconstructionMode::Residual;

    Var total;
    LossBreakdown sum{};
    for (const auto& s : batch) {
        const std::vector<Tensor>* feats =
            cfg_.model.encoder == Encoder::None
                ? nullptr
                : cached(encode_cache_, s.id, s.mixed, VggBackbone::stage_end_taps());
        ForwardOutputs fw = model_.forward(s.mixed, backbone(), bp, with_residue,
                                           feats);
        const std::vector<Tensor>* gt_taps =
            cfg_.weights.beta1 == 0.0
                ? nullptr
                : cached(gt_tap_cache_, s.id, s.gt_t, VggBackbone::perceptual_taps());
        TotalLoss loss = total_loss(constant(s.mixed), fw.t_pred, fw.r_pred, fw.residue,
                                    constant(s.gt_t),
                                    s.gt_r ? constant(*s.gt_r) : Var{}, cfg_.weights,
                                    backbone(), cfg_.reconstruction, gt_taps);
        LossBreakdown b = loss.values();
        sum.pixel += b.pixel;
        sum.perceptual += b.perceptual;
        sum.exclusion += b.exclusion;
        sum.reconstruction += b.reconstruction;
        sum.total += b.total;
        total = total ? add(total, loss.total) : loss.total;
    }
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    if (batch.size() > 1) total = scale(total, inv_n);
    sum.pixel *= inv_n;
    sum.perceptual *= inv_n;
    sum.exclusion *= inv_n;
    sum.reconstruction *= inv_n;
    sum.total *= inv_n;

    if (!std::isfinite(sum.total))
        throw DivergenceError("training loss is not finite", sum);

    backward(total);

    // gather gradients in store order
    std::map<std::string, const Tensor*> grads;
    // BoundParams keeps leaves in registration order
    for (const auto& [name, var] : bp.leaves())
        if (var->grad.numel() > 0) grads[name] = &var->grad;

    double clip_scale = 1.0;
    if (cfg_.grad_clip) {
        double sq = 0.0;
        for (const auto& [_, g] : grads)
            for (int64_t i = 0; i < g->numel(); ++i) sq += (*g)[i] * (*g)[i];
        const double norm = std::sqrt(sq);
        if (norm > cfg_.grad_clip_norm && norm > 0.0) clip_scale = cfg_.grad_clip_norm / norm;
    }

    // Adam (beta 0.9/0.999, eps 1e-8), bias-corrected
    ++adam_step_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(adam_step_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(adam_step_));
    for (auto& [name, theta] : params_.items()) {
        Tensor& m = adam_m_.at(name);
        Tensor& v = adam_v_.at(name);
        auto it = grads.find(name);
        for (int64_t i = 0; i < theta.numel(); ++i) {
            const double g = it == grads.end() ? 0.0 : (*it->second)[i] * clip_scale;
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            theta[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + eps);
        }
    }
    ++steps_done_;
    return sum;
}

Checkpoint Trainer::make_checkpoint(int64_t completed_epochs) const {
    Checkpoint ckpt;
    ckpt.version = kCkptVersion;
    ckpt.config_snapshot = cfg_.to_json();
    ckpt.epoch = completed_epochs;
    ckpt.step = steps_done_;
    ckpt.params = params_;
    ckpt.adam_m = adam_m_;
    ckpt.adam_v = adam_v_;
    ckpt.adam_step = adam_step_;
    return ckpt;
}

Checkpoint train(const TrainConfig& cfg, const std::string& resume_path, std::ostream* echo) {
    cfg.validate();
    if (cfg.manifests.empty()) throw ConfigError("train: no manifests configured");

    std::vector<ManifestRecord> records;
    for (const auto& path : cfg.manifests) {
        DatasetManifest m = DatasetManifest::load(path);
        records.insert(records.end(), m.records.begin(), m.records.end());
    }
    if (records.empty()) throw ConfigError("train: manifests contain no records");

    std::optional<Checkpoint> resume;
    if (!resume_path.empty()) {
        resume = load_checkpoint(resume_path);
        if (resume->config_snapshot != cfg.to_json())
            throw CheckpointError("resume checkpoint was produced by a different configuration");
    }

    Trainer trainer = resume ? Trainer(cfg, *resume) : Trainer(cfg);
    const int64_t start_epoch = resume ? resume->epoch : 0;

    fs::create_directories(cfg.checkpoint_dir);
    const std::string log_path = (fs::path(cfg.checkpoint_dir) / "train_log.jsonl").string();
    std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
    if (!log) throw ResourceError("cannot write training log: " + log_path);

    Checkpoint last = trainer.make_checkpoint(start_epoch);
    for (int64_t epoch = start_epoch; epoch < cfg.max_epochs; ++epoch) {
        std::vector<size_t> order(records.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(derive_seed(cfg.seed, 0x5eed0000 + static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order.begin(), order.end());

        for (size_t bi = 0; bi < order.size(); bi += static_cast<size_t>(cfg.batch_size)) {
            std::vector<Sample> batch;
            for (size_t k = bi; k < std::min(order.size(), bi + static_cast<size_t>(cfg.batch_size));
                 ++k)
                batch.push_back(load_sample(records[order[k]], cfg.image_size));
            const auto t0 = std::chrono::steady_clock::now();
            LossBreakdown b = trainer.step(batch);
            const double wall_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
            json line{{"step", trainer.steps_done()}, {"epoch", epoch},
                      {"pixel", b.pixel},           {"perceptual", b.perceptual},
                      {"exclusion", b.exclusion},   {"reconstruction", b.reconstruction},
                      {"total", b.total},           {"wall_ms", wall_ms}};
            log << line.dump() << "\n";
            log.flush();
            if (echo) *echo << line.dump() << "\n";
        }
        last = trainer.make_checkpoint(epoch + 1);
        const std::string ckpt_path =
            (fs::path(cfg.checkpoint_dir) / ("ckpt_epoch_" + std::to_string(epoch + 1) + ".bin"))
                .string();
        save_checkpoint(ckpt_path, last);
    }
    return last;
}

} // namespace dsrnet
