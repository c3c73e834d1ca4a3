#include "vla/baselines.hpp"

#include <cmath>
#include <stdexcept>

namespace vla {

ArHead::ArHead(int d_model, int bins, int max_tokens, uint64_t seed)
    : d_model_(d_model), bins_(bins), max_tokens_(max_tokens) {
    Rng rng(seed);
    tok_embed = Tensor::param({bins, d_model}, rng, 0.02);
    pos_embed = Tensor::param({max_tokens, d_model}, rng, 0.02);
    start_embed = Tensor::param({1, d_model}, rng, 0.02);
    out_w = Tensor::param({bins, d_model}, rng, 1.0 / std::sqrt(static_cast<double>(d_model)));
    out_b = Tensor::param_zeros({bins});
}

// rows 0..count-1: [start, tok_0, ..., tok_{count-2}] + positional embedding
TensorPtr ArHead::prefix_rows(const std::vector<int>& tokens, int count) const {
    if (count > max_tokens_) throw std::invalid_argument("ar head: prefix exceeds max_tokens");
    std::vector<TensorPtr> rows;
    rows.push_back(start_embed);
    if (count > 1) {
        std::vector<int> ids(tokens.begin(), tokens.begin() + count - 1);
        rows.push_back(embedding_rows(tok_embed, ids));
    }
    auto stacked = rows.size() == 1 ? rows[0] : concat_rows(rows);
    return add(stacked, slice_rows(pos_embed, 0, count));
}

TensorPtr ArHead::training_loss(Backbone& backbone, const std::vector<Image>& images,
                                const std::vector<int>& token_ids,
                                const std::vector<int>& action_tokens) {
    const int n = static_cast<int>(action_tokens.size());
    if (n < 1 || n > max_tokens_ || n % kActionDim != 0) {
        throw std::invalid_argument("ar head: token count must be a positive multiple of 7");
    }
    auto extra = prefix_rows(action_tokens, n);
    auto enc = backbone.encode_with_extra(images, token_ids, extra, /*causal_extra=*/true);
    const int n_obs = backbone.config().seq_len();
    auto action_rows = slice_rows(enc, n_obs, n_obs + n);
    auto logits = add_row_broadcast(matmul_nt(action_rows, out_w), out_b);
    return cross_entropy_rows(logits, action_tokens);
}

std::vector<int> ArHead::decode(Backbone& backbone, const std::vector<Image>& images,
                                const std::vector<int>& token_ids, int chunk_len) const {
    if (!trained_) throw std::runtime_error("ar head: decode on untrained head");
    const int total = chunk_len * kActionDim;
    if (total > max_tokens_) throw std::invalid_argument("ar head: chunk exceeds max_tokens");
    std::vector<int> tokens;
    tokens.reserve(total);
    const int n_obs = backbone.config().seq_len();
    for (int j = 0; j < total; ++j) {
        auto extra = prefix_rows(tokens, j + 1);
        auto enc = backbone.encode_with_extra(images, token_ids, extra, /*causal_extra=*/false);
        auto last = slice_rows(enc, n_obs + j, n_obs + j + 1);
        auto logits = add_row_broadcast(matmul_nt(last, out_w), out_b);
        int best = 0;
        for (int b = 1; b < bins_; ++b) {
            if (logits->data[b] > logits->data[best]) best = b;
        }
        tokens.push_back(best);
    }
    return tokens;
}

std::vector<std::pair<std::string, TensorPtr>> ArHead::named_parameters() const {
    return {{"ar.tok_embed", tok_embed}, {"ar.pos_embed", pos_embed},
            {"ar.start_embed", start_embed}, {"ar.out_w", out_w}, {"ar.out_b", out_b}};
}

std::vector<TensorPtr> ArHead::trainable_parameters() const {
    std::vector<TensorPtr> out;
    for (auto& [n, t] : named_parameters()) out.push_back(t);
    return out;
}

MlpHead::MlpHead(int cond_width, int horizon, int hidden, uint64_t seed)
    : horizon_(horizon), hidden_(hidden) {
    Rng rng(seed);
    w1 = Tensor::param({hidden, cond_width}, rng, 1.0 / std::sqrt(static_cast<double>(cond_width)));
    b1 = Tensor::param_zeros({hidden});
    w2 = Tensor::param({hidden, hidden}, rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
    b2 = Tensor::param_zeros({hidden});
    w3 = Tensor::param({horizon * kActionDim, hidden}, rng,
                       1.0 / std::sqrt(static_cast<double>(hidden)));
    b3 = Tensor::param_zeros({horizon * kActionDim});
}

TensorPtr MlpHead::forward(const TensorPtr& cond) const {
    auto h = gelu(add_row_broadcast(matmul_nt(cond, w1), b1));
    h = gelu(add_row_broadcast(matmul_nt(h, w2), b2));
    return add_row_broadcast(matmul_nt(h, w3), b3);
}

std::vector<std::pair<std::string, TensorPtr>> MlpHead::named_parameters() const {
    return {{"mlp.w1", w1}, {"mlp.b1", b1}, {"mlp.w2", w2},
            {"mlp.b2", b2}, {"mlp.w3", w3}, {"mlp.b3", b3}};
}

std::vector<TensorPtr> MlpHead::trainable_parameters() const {
    std::vector<TensorPtr> out;
    for (auto& [n, t] : named_parameters()) out.push_back(t);
    return out;
}

}  // namespace vla
