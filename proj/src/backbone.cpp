#include "vla/backbone.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace vla {

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus) {
    Vocabulary v;
    v.words = {"[PAD]", "[UNK]"};
    v.ids["[PAD]"] = kPad;
    v.ids["[UNK]"] = kUnk;
    for (const auto& line : corpus) {
        std::istringstream ss(line);
        std::string w;
        while (ss >> w) {
            std::transform(w.begin(), w.end(), w.begin(),
                           [](unsigned char c) { return std::tolower(c); });
            if (!v.ids.count(w)) {
                v.ids[w] = static_cast<int>(v.words.size());
                v.words.push_back(w);
            }
        }
    }
    return v;
}

std::vector<int> Vocabulary::encode(const std::string& text, int max_len) const {
    std::vector<int> out;
    std::istringstream ss(text);
    std::string w;
    while (ss >> w && static_cast<int>(out.size()) < max_len) {
        std::transform(w.begin(), w.end(), w.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        auto it = ids.find(w);
        out.push_back(it == ids.end() ? kUnk : it->second);
    }
    out.resize(max_len, kPad);
    return out;
}

void BackboneConfig::validate() const {
    if (d_model % num_heads != 0) {
        throw std::invalid_argument("backbone config: d_model not divisible by num_heads");
    }
    if (image_size % patch_size != 0) {
        throw std::invalid_argument("backbone config: image_size not divisible by patch_size");
    }
    if (d_model < 2 || num_layers < 1 || max_text_len < 1 || num_cameras < 1 || ffn_hidden < 1) {
        throw std::invalid_argument("backbone config: degenerate dimensions");
    }
}

Backbone::Backbone(BackboneConfig cfg, const Vocabulary& vocab, uint64_t seed)
    : cfg_(cfg), vocab_(vocab) {
    cfg_.validate();
    Rng rng(seed);
    const int d = cfg_.d_model;
    const double std_proj = 1.0 / std::sqrt(static_cast<double>(d));
    const int patch_dim = cfg_.patch_size * cfg_.patch_size * cfg_.channels;

    token_embed = Tensor::randn({vocab_.size(), d}, rng, 0.02);
    text_pos = Tensor::randn({cfg_.max_text_len, d}, rng, 0.02);
    patch_proj_w = Tensor::randn({d, patch_dim}, rng, 1.0 / std::sqrt(static_cast<double>(patch_dim)));
    patch_proj_b = Tensor::create({d});
    for (int c = 0; c < cfg_.num_cameras; ++c) {
        camera_pos.push_back(Tensor::randn({cfg_.num_patches(), d}, rng, 0.02));
    }
    layers_.resize(cfg_.num_layers);
    for (auto& l : layers_) {
        l.w_q = Tensor::randn({d, d}, rng, std_proj);
        l.w_k = Tensor::randn({d, d}, rng, std_proj);
        l.w_v = Tensor::randn({d, d}, rng, std_proj);
        l.w_o = Tensor::randn({d, d}, rng, std_proj);
        l.ln1_gamma = Tensor::create({d}, 1.0);
        l.ln1_beta = Tensor::create({d});
        l.ln2_gamma = Tensor::create({d}, 1.0);
        l.ln2_beta = Tensor::create({d});
        l.ffn_w1 = Tensor::randn({cfg_.ffn_hidden, d}, rng, std_proj);
        l.ffn_b1 = Tensor::create({cfg_.ffn_hidden});
        l.ffn_w2 = Tensor::randn({d, cfg_.ffn_hidden}, rng,
                                 1.0 / std::sqrt(static_cast<double>(cfg_.ffn_hidden)));
        l.ffn_b2 = Tensor::create({d});
    }
    final_ln_gamma = Tensor::create({d}, 1.0);
    final_ln_beta = Tensor::create({d});
}

void Backbone::attach_lora(int rank, double alpha, uint64_t seed) {
    if (lora_attached_) throw std::runtime_error("attach_lora: adapters already attached");
    Rng rng(seed);
    for (auto& l : layers_) {
        l.lora_q = LoraAdapter::attach(l.w_q, rank, alpha, rng);
        l.lora_k = LoraAdapter::attach(l.w_k, rank, alpha, rng);
        l.lora_v = LoraAdapter::attach(l.w_v, rank, alpha, rng);
    }
    lora_attached_ = true;
    lora_rank_ = rank;
    lora_alpha_ = alpha;
}

void Backbone::merge_lora() {
    if (!lora_attached_) throw std::runtime_error("merge_lora: no adapters attached");
    if (lora_merged_) throw std::runtime_error("merge_lora: adapters already merged");
    for (auto& l : layers_) {
        l.w_q = l.lora_q->merge();
        l.w_k = l.lora_k->merge();
        l.w_v = l.lora_v->merge();
    }
    lora_merged_ = true;
}

TensorPtr Backbone::patchify(const Image& image, int camera) const {
    const int hw = cfg_.image_size;
    const int ch = cfg_.channels;
    if (static_cast<int>(image.size()) != hw * hw * ch) {
        throw std::invalid_argument("patchify: image size " + std::to_string(image.size()) +
                                    " does not match config " + std::to_string(hw * hw * ch));
    }
    const int ps = cfg_.patch_size;
    const int grid = hw / ps;
    const int patch_dim = ps * ps * ch;
    auto patches = Tensor::create({grid * grid, patch_dim});
    for (int py = 0; py < grid; ++py) {
        for (int px = 0; px < grid; ++px) {
            double* row = patches->data.data() + static_cast<size_t>(py * grid + px) * patch_dim;
            int k = 0;
            for (int y = 0; y < ps; ++y) {
                for (int x = 0; x < ps; ++x) {
                    for (int c = 0; c < ch; ++c) {
                        row[k++] = image[(static_cast<size_t>(py * ps + y) * hw + px * ps + x) * ch + c];
                    }
                }
            }
        }
    }
    auto proj = add_row_broadcast(matmul_nt(patches, patch_proj_w), patch_proj_b);
    return add(proj, camera_pos.at(camera));
}

TensorPtr Backbone::attention(const TensorPtr& x, const AttentionLayer& layer,
                              const TensorPtr& mask) const {
    const int d = cfg_.d_model;
    const int heads = cfg_.num_heads;
    const int dh = d / heads;
    auto q = layer.lora_q && !lora_merged_ ? layer.lora_q->forward(x) : matmul_nt(x, layer.w_q);
    auto k = layer.lora_k && !lora_merged_ ? layer.lora_k->forward(x) : matmul_nt(x, layer.w_k);
    auto v = layer.lora_v && !lora_merged_ ? layer.lora_v->forward(x) : matmul_nt(x, layer.w_v);
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<TensorPtr> head_outs;
    head_outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        auto qh = slice_cols(q, h * dh, (h + 1) * dh);
        auto kh = slice_cols(k, h * dh, (h + 1) * dh);
        auto vh = slice_cols(v, h * dh, (h + 1) * dh);
        auto scores = mul_scalar(matmul_nt(qh, kh), inv_sqrt_dh);  // [n,n]
        if (mask) scores = add(scores, mask);
        auto probs = softmax_rows(scores);
        head_outs.push_back(matmul(probs, vh));
    }
    return matmul_nt(concat_cols(head_outs), layer.w_o);
}

TensorPtr Backbone::encode(const std::vector<Image>& images, const std::vector<int>& token_ids) {
    return encode_impl(images, token_ids, nullptr, false);
}

TensorPtr Backbone::encode_with_extra(const std::vector<Image>& images,
                                      const std::vector<int>& token_ids,
                                      const TensorPtr& extra_rows, bool causal_extra) {
    return encode_impl(images, token_ids, extra_rows, causal_extra);
}

TensorPtr Backbone::encode_impl(const std::vector<Image>& images,
                                const std::vector<int>& token_ids, const TensorPtr& extra_rows,
                                bool causal_extra) {
    if (static_cast<int>(images.size()) != cfg_.num_cameras) {
        throw std::invalid_argument("encode: expected " + std::to_string(cfg_.num_cameras) +
                                    " camera images, got " + std::to_string(images.size()));
    }
    if (static_cast<int>(token_ids.size()) != cfg_.max_text_len) {
        throw std::invalid_argument("encode: token sequence length mismatch");
    }
    ++forward_count_;
    auto text = add(embedding_rows(token_embed, token_ids), text_pos);
    std::vector<TensorPtr> parts = {text};
    for (int c = 0; c < cfg_.num_cameras; ++c) parts.push_back(patchify(images[c], c));
    if (extra_rows) parts.push_back(extra_rows);
    auto x = concat_rows(parts);

    TensorPtr mask;  // additive attention mask, shared across layers/heads
    if (extra_rows && causal_extra) {
        const int n_obs = cfg_.seq_len();
        const int n = n_obs + extra_rows->shape[0];
        mask = Tensor::create({n, n});
        for (int i = 0; i < n; ++i) {
            for (int j = n_obs; j < n; ++j) {
                if (j > i) mask->data[static_cast<size_t>(i) * n + j] = -1e30;
            }
        }
    }
    for (const auto& layer : layers_) {
        auto normed = layer_norm_rows(x, layer.ln1_gamma, layer.ln1_beta);
        x = add(x, attention(normed, layer, mask));
        auto normed2 = layer_norm_rows(x, layer.ln2_gamma, layer.ln2_beta);
        auto h = gelu(add_row_broadcast(matmul_nt(normed2, layer.ffn_w1), layer.ffn_b1));
        x = add(x, add_row_broadcast(matmul_nt(h, layer.ffn_w2), layer.ffn_b2));
    }
    return layer_norm_rows(x, final_ln_gamma, final_ln_beta);
}

std::vector<std::pair<std::string, TensorPtr>> Backbone::named_parameters() const {
    std::vector<std::pair<std::string, TensorPtr>> out;
    out.emplace_back("backbone.token_embed", token_embed);
    out.emplace_back("backbone.text_pos", text_pos);
    out.emplace_back("backbone.patch_proj_w", patch_proj_w);
    out.emplace_back("backbone.patch_proj_b", patch_proj_b);
    for (size_t c = 0; c < camera_pos.size(); ++c) {
        out.emplace_back("backbone.camera_pos." + std::to_string(c), camera_pos[c]);
    }
    for (size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        const std::string p = "backbone.layers." + std::to_string(i) + ".";
        out.emplace_back(p + "w_q", l.w_q);
        out.emplace_back(p + "w_k", l.w_k);
        out.emplace_back(p + "w_v", l.w_v);
        out.emplace_back(p + "w_o", l.w_o);
        out.emplace_back(p + "ln1_gamma", l.ln1_gamma);
        out.emplace_back(p + "ln1_beta", l.ln1_beta);
        out.emplace_back(p + "ln2_gamma", l.ln2_gamma);
        out.emplace_back(p + "ln2_beta", l.ln2_beta);
        out.emplace_back(p + "ffn_w1", l.ffn_w1);
        out.emplace_back(p + "ffn_b1", l.ffn_b1);
        out.emplace_back(p + "ffn_w2", l.ffn_w2);
        out.emplace_back(p + "ffn_b2", l.ffn_b2);
        if (l.lora_q && !lora_merged_) {
            out.emplace_back(p + "lora_q.B", l.lora_q->b());
            out.emplace_back(p + "lora_q.A", l.lora_q->a());
            out.emplace_back(p + "lora_k.B", l.lora_k->b());
            out.emplace_back(p + "lora_k.A", l.lora_k->a());
            out.emplace_back(p + "lora_v.B", l.lora_v->b());
            out.emplace_back(p + "lora_v.A", l.lora_v->a());
        }
    }
    out.emplace_back("backbone.final_ln_gamma", final_ln_gamma);
    out.emplace_back("backbone.final_ln_beta", final_ln_beta);
    return out;
}

std::vector<TensorPtr> Backbone::trainable_parameters() const {
    std::vector<TensorPtr> out;
    if (!lora_attached_ || lora_merged_) return out;
    for (const auto& l : layers_) {
        out.push_back(l.lora_q->b());
        out.push_back(l.lora_q->a());
        out.push_back(l.lora_k->b());
        out.push_back(l.lora_k->a());
        out.push_back(l.lora_v->b());
        out.push_back(l.lora_v->a());
    }
    return out;
}

int64_t Backbone::base_params() const {
    int64_t n = 0;
    for (const auto& [name, t] : named_parameters()) {
        if (name.find("lora") == std::string::npos) n += t->size();
    }
    return n;
}

int64_t Backbone::lora_params() const {
    int64_t n = 0;
    for (const auto& t : trainable_parameters()) n += t->size();
    return n;
}

int64_t Backbone::total_params() const { return base_params() + lora_params(); }

double Backbone::trainable_fraction() const {
    return static_cast<double>(lora_params()) / static_cast<double>(base_params());
}

int select_lora_rank(const BackboneConfig& cfg, int64_t base_params, double target) {
    // per rank unit: num_layers adapted Q,K,V, each contributing r*(d+d)
    const int64_t per_rank = static_cast<int64_t>(cfg.num_layers) * 3 * 2 * cfg.d_model;
    int best_r = 1;
    double best_gap = 1e9;
    for (int r = 1; r < cfg.d_model; ++r) {
        const double frac = static_cast<double>(per_rank * r) / static_cast<double>(base_params);
        const double gap = std::abs(frac - target);
        if (gap < best_gap) {
            best_gap = gap;
            best_r = r;
        }
    }
    return best_r;
}

}  // namespace vla
