#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "vla/dataset.hpp"
#include "vla/model.hpp"

namespace vla {

struct TrainConfig {
    ModelConfig model;
    int steps = 3000;
    int batch_size = 16;
    // (t, eps) pairs drawn per observation in the diffusion loss. The backbone
    // pass dominates step cost, so extra draws buy denoiser supervision nearly
    // for free; they share (and accumulate gradient through) one conditioning
    // vector. Ignored by the mlp/ar heads.
    int diffusion_draws = 4;
    double lr_head = 1e-3;
    double lr_lora = 1e-4;
    uint64_t seed = 1;
    std::vector<std::string> datasets;
    std::string out_checkpoint = "model.ckpt";
    int checkpoint_every = 0;  // 0 = final only
    std::string log_file;      // empty = stderr only

    void validate() const;
};

// key = value sections: [model], [train], [data]. Unknown keys rejected.
TrainConfig load_train_config(const std::string& path);
std::string serialize_train_config(const TrainConfig& cfg);

struct TrainResult {
    std::string checkpoint_path;
    double first_decile_loss = 0.0;
    double last_decile_loss = 0.0;
    std::vector<int> task_sample_counts;
    uint64_t frozen_hash_before = 0;
    uint64_t frozen_hash_after = 0;
};

// Multi-task behavior-cloning loop. Optimizes LoRA adapters at lr_lora and
// conditioning + head at lr_head; backbone base weights never update.
// `resume_from`, when nonempty, initializes the model from a checkpoint.
TrainResult train(const TrainConfig& cfg, std::ostream* log = nullptr,
                  const std::string& resume_from = "");

// In-memory variant for tests / the acceptance suite.
TrainResult train_on(const TrainConfig& cfg, const std::vector<std::vector<Demonstration>>& tasks,
                     std::ostream* log = nullptr, const std::string& resume_from = "");

}  // namespace vla
