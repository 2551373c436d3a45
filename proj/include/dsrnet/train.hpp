#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dsrnet/losses.hpp"
#include "dsrnet/metrics.hpp"
#include "dsrnet/model.hpp"

namespace dsrnet {

// Non-finite training loss; carries the offending breakdown.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& msg, LossBreakdown breakdown)
        : Error(msg), breakdown_(breakdown) {}
    const LossBreakdown& breakdown() const { return breakdown_; }

private:
    LossBreakdown breakdown_;
};

struct TrainConfig {
    double learning_rate = 1e-4; // fixed, no schedule
    int64_t batch_size = 1;
    int64_t max_epochs = 20;
    uint64_t seed = 0;
    LossWeights weights;
    ReconstructionMode reconstruction = ReconstructionMode::Residual;
    ModelConfig model; // interaction/encoder ablation flags live here
    std::vector<std::string> manifests;
    std::string checkpoint_dir = "checkpoints";
    std::string backbone_weights; // empty -> seeded random backbone
    int64_t image_size = 224;     // center-crop bound during loading; 0 = native
    bool grad_clip = false;
    double grad_clip_norm = 1.0;
    int64_t feature_cache_entries = 16;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct Checkpoint {
    uint32_t version = 1;
    nlohmann::json config_snapshot;
    int64_t epoch = 0; // completed epochs
    int64_t step = 0;  // completed optimizer steps
    ParamStore params;
    ParamStore adam_m, adam_v;
    int64_t adam_step = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path); // CheckpointError on mismatch/corruption

struct Sample {
    std::string id;
    Tensor mixed, gt_t;
    std::optional<Tensor> gt_r;
};

// Loads a record's images, center-crops to the size bound and reflect-pads
// everything to the next multiple of 16.
Sample load_sample(const ManifestRecord& rec, int64_t image_size);

// Single-writer training engine: owns parameters, Adam moments and the
// backbone feature cache. Graphs are rebuilt per step.
class Trainer {
public:
    explicit Trainer(const TrainConfig& cfg);
    Trainer(const TrainConfig& cfg, const Checkpoint& resume);

    // One Adam update on the total loss of the batch; returns the pre-update
    // breakdown. Records without a reflection ground truth drop R-dependent
    // pixel terms.
    LossBreakdown step(const std::vector<Sample>& batch);

    Checkpoint make_checkpoint(int64_t completed_epochs) const;

    const TrainConfig& config() const { return cfg_; }
    const DsrNet& model() const { return model_; }
    const VggBackbone* backbone() const { return backbone_ ? &*backbone_ : nullptr; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    int64_t steps_done() const { return steps_done_; }

private:
    void build_backbone();
    const std::vector<Tensor>* cached(std::map<std::string, std::vector<Tensor>>& cache,
                                      const std::string& key, const Tensor& image,
                                      const std::vector<int>& taps);

    TrainConfig cfg_;
    DsrNet model_;
    std::optional<VggBackbone> backbone_;
    ParamStore params_;
    ParamStore adam_m_, adam_v_;
    int64_t adam_step_ = 0;
    int64_t steps_done_ = 0;
    std::map<std::string, std::vector<Tensor>> encode_cache_;  // stage ends of the mixed input
    std::map<std::string, std::vector<Tensor>> gt_tap_cache_;  // perceptual taps of gt_t
};

// Epoch loop over the shuffled manifests with per-step JSONL logging and a
// checkpoint per epoch. Returns the final checkpoint. resume_path restores a
// previous run; echo, when set, receives the log lines as well.
Checkpoint train(const TrainConfig& cfg, const std::string& resume_path = "",
                 std::ostream* echo = nullptr);

} // namespace dsrnet
