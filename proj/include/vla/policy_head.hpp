#pragma once

#include <functional>
#include <vector>

#include "vla/tensor.hpp"

namespace vla {

inline constexpr int kActionDim = 7;

// DDPM beta/alpha/alpha_bar tables, t in {1..T} (index 0 unused except
// alpha_bar[0] = 1 for the t -> 0 limit).
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // size T+1
    std::vector<double> alpha;      // size T+1
    std::vector<double> alpha_bar;  // size T+1, alpha_bar[0] = 1

    static NoiseSchedule squared_cosine(int T);
    void validate() const;
};

// Per-dimension affine map to [-1,1]: normalized = (v - offset) / scale.
struct NormStats {
    std::vector<double> offset;  // size kActionDim
    std::vector<double> scale;   // size kActionDim

    static NormStats fit(const std::vector<std::vector<double>>& rows);
    std::vector<double> normalize(const std::vector<double>& v) const;
    std::vector<double> denormalize(const std::vector<double>& v) const;
};

// a_t = sqrt(alpha_bar[t]) a0 + sqrt(1 - alpha_bar[t]) eps, plain arrays
std::vector<double> q_sample(const std::vector<double>& a0, int t, const std::vector<double>& eps,
                             const NoiseSchedule& sched);
// inverse given the true eps
std::vector<double> reconstruct_a0(const std::vector<double>& a_t, int t,
                                   const std::vector<double>& eps, const NoiseSchedule& sched);

// Adaptive pool over the token axis -> layer norm -> flatten -> concat
// proprio -> 3-layer MLP to a fixed conditioning width.
class ConditioningNet {
public:
    ConditioningNet(int d_model, int pooled_tokens, int cond_width, uint64_t seed);

    // embeddings [n, d_model], proprio normalized [kActionDim] -> [1, cond_width]
    TensorPtr forward(const TensorPtr& embeddings, const std::vector<double>& proprio) const;

    int cond_width() const { return cond_width_; }
    int pooled_tokens() const { return pooled_tokens_; }
    std::vector<std::pair<std::string, TensorPtr>> named_parameters() const;
    std::vector<TensorPtr> trainable_parameters() const;

    TensorPtr ln_gamma, ln_beta;
    TensorPtr w1, b1, w2, b2, w3, b3;

private:
    int d_model_, pooled_tokens_, cond_width_;
};

// Noise-prediction MLP over the flattened action chunk; sinusoidal timestep
// embedding and the conditioning vector are projected in at every hidden
// layer. Output layer starts at zero.
class DenoiserMlp {
public:
    DenoiserMlp(int horizon, int cond_width, int hidden, int time_embed_dim, uint64_t seed);

    // a_t [1, H*7] normalized-space chunk, t in {1..T}
    TensorPtr forward(const TensorPtr& a_t_flat, int t, const TensorPtr& cond) const;

    int horizon() const { return horizon_; }
    int hidden() const { return hidden_; }
    int time_embed_dim() const { return time_embed_dim_; }
    std::vector<std::pair<std::string, TensorPtr>> named_parameters() const;
    std::vector<TensorPtr> trainable_parameters() const;

    TensorPtr w1, b1, w2, b2, w3, b3, w_out, b_out;
    TensorPtr tproj2, tproj3;  // time-embedding projections, deeper layers
    TensorPtr cproj2, cproj3;  // conditioning projections, deeper layers

private:
    TensorPtr time_embedding(int t) const;
    int horizon_, cond_width_, hidden_, time_embed_dim_;
};

// eps-prediction callback used by the sampler: (a_t flat [H*7], t) -> eps_hat
using NoisePredictor = std::function<std::vector<double>(const std::vector<double>&, int)>;

// One diffusion training sample: per-sample t ~ U{1..T}, eps ~ N(0,I),
// MSE between eps and the network prediction. Returns the graph node.
TensorPtr diffusion_sample_loss(const DenoiserMlp& denoiser, const TensorPtr& cond,
                                const std::vector<double>& a0_flat, const NoiseSchedule& sched,
                                Rng& rng);

// K-step strided ancestral DDPM sampling from a noise predictor.
// Returns the normalized-space chunk, clipped to [-1,1].
std::vector<double> sample_actions(const NoisePredictor& predict, int chunk_size,
                                   const NoiseSchedule& sched, int K, Rng& rng);

}  // namespace vla
