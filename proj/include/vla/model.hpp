#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vla/backbone.hpp"
#include "vla/baselines.hpp"
#include "vla/policy_head.hpp"
#include "vla/simenv.hpp"

namespace vla {

enum class HeadType { diffusion, ar, mlp };

std::string head_type_name(HeadType h);
HeadType head_type_from_name(const std::string& s);

struct ModelConfig {
    BackboneConfig backbone;
    int pooled_tokens = 4;
    int cond_width = 256;
    int horizon = 16;
    int exec_horizon = 8;
    int diffusion_T = 100;
    int diffusion_K = 10;
    int denoiser_hidden = 256;
    int time_embed_dim = 32;
    int mlp_hidden = 256;
    int lora_rank = 0;  // 0 = auto-select nearest the 5% trainable target
    double lora_alpha = 16.0;
    HeadType head = HeadType::diffusion;
    int ar_bins = 256;
    uint64_t init_seed = 42;

    void validate() const;
};

// Backbone + conditioning + selected action decoder, with the trainable /
// frozen partition: LoRA adapters, conditioning MLP and head train; the
// backbone base stays frozen.
class PolicyModel {
public:
    PolicyModel(const ModelConfig& cfg, const Vocabulary& vocab);

    const ModelConfig& config() const { return cfg_; }
    Backbone& backbone() { return *backbone_; }
    const Backbone& backbone() const { return *backbone_; }
    ConditioningNet& cond() { return *cond_; }
    DenoiserMlp& denoiser() { return *denoiser_; }
    MlpHead& mlp_head() { return *mlp_; }
    ArHead& ar_head() { return *ar_; }
    const NoiseSchedule& schedule() const { return sched_; }

    NormStats action_stats, proprio_stats;
    bool stats_ready = false;

    ParamCounts count_parameters() const;  // head-inclusive totals
    double transformer_trainable_fraction() const { return backbone_->trainable_fraction(); }
    int lora_rank() const { return backbone_->lora_rank(); }

    std::vector<TensorPtr> lora_parameters() const { return backbone_->trainable_parameters(); }
    std::vector<TensorPtr> head_parameters() const;  // conditioning + decoder
    std::vector<std::pair<std::string, TensorPtr>> named_parameters() const;

    // Full policy step: observation -> horizon x 7 environment-space actions.
    std::vector<std::vector<double>> predict_chunk(const Observation& obs, uint64_t seed);

    TensorPtr encode_observation(const Observation& obs);
    TensorPtr condition_observation(const Observation& obs);

    void merge_lora() { backbone_->merge_lora(); }
    bool merged() const { return backbone_->lora_merged(); }

private:
    ModelConfig cfg_;
    std::unique_ptr<Backbone> backbone_;
    std::unique_ptr<ConditioningNet> cond_;
    std::unique_ptr<DenoiserMlp> denoiser_;
    std::unique_ptr<MlpHead> mlp_;
    std::unique_ptr<ArHead> ar_;
    NoiseSchedule sched_;
};

// ---- checkpoint container ----
// Self-describing binary: magic, version, config text, vocabulary,
// normalization stats, named f64 arrays, FNV-1a64 content checksum.
// Adapters are stored unmerged so merge equivalence can be re-verified
// at load time.

void save_checkpoint(const PolicyModel& model, const std::string& path);
std::unique_ptr<PolicyModel> load_checkpoint(const std::string& path,
                                             bool merge = false,
                                             bool verify_merge = true);

// FNV-1a 64-bit over raw bytes (checkpoint integrity + freeze hashing)
uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ULL);
// Hash of every frozen backbone base weight, for freeze-integrity checks.
uint64_t frozen_weight_hash(const PolicyModel& model);

std::string serialize_model_config(const ModelConfig& cfg);
ModelConfig parse_model_config_text(const std::string& text);

}  // namespace vla
