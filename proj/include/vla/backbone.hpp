#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vla/lora.hpp"
#include "vla/tensor.hpp"

namespace vla {

// Whitespace tokenizer over the fixed instruction corpus. [PAD]=0, [UNK]=1,
// then words in first-seen corpus order so the mapping is stable.
struct Vocabulary {
    std::vector<std::string> words;           // index -> word
    std::map<std::string, int> ids;           // word -> index

    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    static Vocabulary build(const std::vector<std::string>& corpus);
    std::vector<int> encode(const std::string& text, int max_len) const;
    int size() const { return static_cast<int>(words.size()); }
};

struct BackboneConfig {
    int d_model = 128;
    int num_layers = 4;
    int num_heads = 4;
    int patch_size = 8;
    int image_size = 32;
    int channels = 3;
    int max_text_len = 12;
    int num_cameras = 2;
    int ffn_hidden = 256;

    int num_patches() const {
        const int g = image_size / patch_size;
        return g * g;
    }
    int seq_len() const { return max_text_len + num_cameras * num_patches(); }
    void validate() const;
};

// One rendered camera view, row-major pixels in [0,1], image_size² × channels.
using Image = std::vector<double>;

struct AttentionLayer {
    TensorPtr w_q, w_k, w_v, w_o;  // [d,d], frozen
    std::optional<LoraAdapter> lora_q, lora_k, lora_v;
    TensorPtr ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    TensorPtr ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// Toy multimodal transformer encoder. Base weights are a fixed-seed random
// init that is then frozen; only attached LoRA adapters train.
class Backbone {
public:
    Backbone(BackboneConfig cfg, const Vocabulary& vocab, uint64_t seed);

    // Attach rank-r adapters to every layer's Q, K, V projections.
    void attach_lora(int rank, double alpha, uint64_t seed);
    // Fold every adapter into its base weight. Error if already merged.
    void merge_lora();
    bool lora_attached() const { return lora_attached_; }
    bool lora_merged() const { return lora_merged_; }
    int lora_rank() const { return lora_rank_; }
    double lora_alpha() const { return lora_alpha_; }

    // images: one per camera, pixels in [0,1].
    TensorPtr encode(const std::vector<Image>& images, const std::vector<int>& token_ids);
    // Same, with pre-embedded extra rows appended after the observation
    // tokens (used by the autoregressive action decoder). When
    // causal_extra is set, extra row i only attends to observation rows and
    // extra rows <= i, and observation rows never attend to extra rows.
    TensorPtr encode_with_extra(const std::vector<Image>& images,
                                const std::vector<int>& token_ids, const TensorPtr& extra_rows,
                                bool causal_extra);

    // All weights, in a stable order, with stable names.
    std::vector<std::pair<std::string, TensorPtr>> named_parameters() const;
    std::vector<TensorPtr> trainable_parameters() const;  // LoRA B/A only
    int64_t total_params() const;                         // base + adapters
    int64_t base_params() const;                          // frozen transformer only
    int64_t lora_params() const;

    // trainable / frozen-transformer parameters (the tested 5% target)
    double trainable_fraction() const;
    // mutable access for checkpoint restore
    std::vector<AttentionLayer>& layers() { return layers_; }
    const BackboneConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }

    // forward-pass counter for the latency/structure benchmarks
    int64_t forward_count() const { return forward_count_; }
    void reset_forward_count() { forward_count_ = 0; }

    TensorPtr patch_proj_w, patch_proj_b;   // [d, ps*ps*ch], [d]
    TensorPtr token_embed;                  // [V, d]
    TensorPtr text_pos;                     // [max_text_len, d]
    std::vector<TensorPtr> camera_pos;      // per camera [num_patches, d]
    TensorPtr final_ln_gamma, final_ln_beta;

    // Patch token sequence for one camera (projection + positional embed).
    TensorPtr patchify(const Image& image, int camera) const;

private:
    TensorPtr encode_impl(const std::vector<Image>& images, const std::vector<int>& token_ids,
                          const TensorPtr& extra_rows, bool causal_extra);
    TensorPtr attention(const TensorPtr& x, const AttentionLayer& layer,
                        const TensorPtr& mask) const;

    BackboneConfig cfg_;
    Vocabulary vocab_;
    std::vector<AttentionLayer> layers_;
    bool lora_attached_ = false;
    bool lora_merged_ = false;
    int lora_rank_ = 0;
    double lora_alpha_ = 0.0;
    int64_t forward_count_ = 0;
};

// Rank whose LoRA budget lands the trainable fraction nearest the 5% target
// for this config (3 adapted projections of d² per layer, r(d+d) each).
int select_lora_rank(const BackboneConfig& cfg, int64_t base_params, double target = 0.05);

struct ParamCounts {
    int64_t total = 0;
    int64_t trainable = 0;
};

}  // namespace vla
