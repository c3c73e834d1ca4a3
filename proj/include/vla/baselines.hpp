#pragma once

#include <string>
#include <vector>

#include "vla/backbone.hpp"
#include "vla/policy_head.hpp"

namespace vla {

// Uniform per-dimension discretization of (normalized) action values.
struct ActionTokenizer {
    int bins = 256;
    double lo = -1.0, hi = 1.0;

    ActionTokenizer(int bins_ = 256, double lo_ = -1.0, double hi_ = 1.0)
        : bins(bins_), lo(lo_), hi(hi_) {
        if (bins < 2) throw std::invalid_argument("action tokenizer: bins must be >= 2");
    }
    int discretize(double v) const {
        const double c = std::clamp(v, lo, hi);
        const int b = static_cast<int>(std::floor((c - lo) / (hi - lo) * bins));
        return std::min(b, bins - 1);
    }
    double decode(int b) const { return lo + (b + 0.5) * (hi - lo) / bins; }
    std::vector<int> discretize_all(const std::vector<double>& v) const {
        std::vector<int> out(v.size());
        for (size_t i = 0; i < v.size(); ++i) out[i] = discretize(v[i]);
        return out;
    }
    std::vector<double> decode_all(const std::vector<int>& t) const {
        std::vector<double> out(t.size());
        for (size_t i = 0; i < t.size(); ++i) out[i] = decode(t[i]);
        return out;
    }
};

// OpenVLA-style autoregressive discrete-token decoder. Every emitted token
// costs one full backbone pass over the growing prefix; decoding is greedy.
class ArHead {
public:
    ArHead(int d_model, int bins, int max_tokens, uint64_t seed);

    // teacher-forced cross-entropy over all token positions (one masked pass)
    TensorPtr training_loss(Backbone& backbone, const std::vector<Image>& images,
                            const std::vector<int>& token_ids,
                            const std::vector<int>& action_tokens);

    // H*7 greedy tokens, one backbone pass per token. Throws if untrained.
    std::vector<int> decode(Backbone& backbone, const std::vector<Image>& images,
                            const std::vector<int>& token_ids, int chunk_len) const;

    void mark_trained() { trained_ = true; }
    bool trained() const { return trained_; }
    int bins() const { return bins_; }
    int max_tokens() const { return max_tokens_; }

    std::vector<std::pair<std::string, TensorPtr>> named_parameters() const;
    std::vector<TensorPtr> trainable_parameters() const;

    TensorPtr tok_embed;   // [bins, d]
    TensorPtr pos_embed;   // [max_tokens, d]
    TensorPtr start_embed; // [1, d]
    TensorPtr out_w, out_b;

private:
    TensorPtr prefix_rows(const std::vector<int>& tokens, int count) const;
    int d_model_, bins_, max_tokens_;
    bool trained_ = false;
};

// Vanilla direct-regression head: conditioning vector -> normalized chunk.
class MlpHead {
public:
    MlpHead(int cond_width, int horizon, int hidden, uint64_t seed);

    TensorPtr forward(const TensorPtr& cond) const;  // [1, H*7]

    int horizon() const { return horizon_; }
    std::vector<std::pair<std::string, TensorPtr>> named_parameters() const;
    std::vector<TensorPtr> trainable_parameters() const;

    TensorPtr w1, b1, w2, b2, w3, b3;

private:
    int horizon_, hidden_;
};

}  // namespace vla
