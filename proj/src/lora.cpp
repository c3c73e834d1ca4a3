#include "vla/lora.hpp"

#include <stdexcept>

namespace vla {

LoraAdapter LoraAdapter::attach(TensorPtr frozen_weight, int rank, double alpha, Rng& rng) {
    if (frozen_weight->shape.size() != 2) {
        throw std::invalid_argument("lora attach: base weight must be 2-D");
    }
    const int d = frozen_weight->shape[0];
    const int k = frozen_weight->shape[1];
    if (rank < 1 || rank >= std::min(d, k)) {
        throw std::invalid_argument("lora attach: rank " + std::to_string(rank) +
                                    " out of range [1, min(" + std::to_string(d) + "," +
                                    std::to_string(k) + "))");
    }
    if (alpha <= 0.0) throw std::invalid_argument("lora attach: alpha must be positive");
    LoraAdapter ad;
    ad.base_ = std::move(frozen_weight);
    ad.base_->requires_grad = false;
    ad.rank_ = rank;
    ad.alpha_ = alpha;
    ad.a_ = Tensor::param({rank, k}, rng, 0.02);
    ad.b_ = Tensor::param_zeros({d, rank});
    return ad;
}

LoraAdapter LoraAdapter::restore(TensorPtr base, TensorPtr b, TensorPtr a, double alpha) {
    LoraAdapter ad;
    ad.base_ = std::move(base);
    ad.base_->requires_grad = false;
    ad.b_ = std::move(b);
    ad.a_ = std::move(a);
    ad.rank_ = ad.a_->shape[0];
    ad.alpha_ = alpha;
    ad.b_->requires_grad = true;
    ad.b_->ensure_grad();
    ad.a_->requires_grad = true;
    ad.a_->ensure_grad();
    return ad;
}

TensorPtr LoraAdapter::forward(const TensorPtr& x) const {
    auto in = x;
    if (in->shape.size() == 1) in = reshape(in, {1, in->shape[0]});
    auto base_out = matmul_nt(in, base_);
    if (merged_) return base_out;  // delta already folded into base_
    auto low = matmul_nt(in, a_);    // [n,r]
    auto delta = matmul_nt(low, b_);  // x·Aᵀ·Bᵀ = x·(BA)ᵀ
    return add(base_out, mul_scalar(delta, scale()));
}

TensorPtr LoraAdapter::merge() {
    if (merged_) throw std::runtime_error("lora merge: adapter already merged");
    const int d = base_->shape[0];
    const int k = base_->shape[1];
    auto merged = Tensor::create({d, k});
    // W0 + (alpha/r) B A, accumulated in plain loops (no graph)
    merged->data = base_->data;
    const double s = scale();
    for (int i = 0; i < d; ++i) {
        for (int r = 0; r < rank_; ++r) {
            const double bv = s * b_->data[static_cast<size_t>(i) * rank_ + r];
            if (bv == 0.0) continue;
            for (int j = 0; j < k; ++j) {
                merged->data[static_cast<size_t>(i) * k + j] +=
                    bv * a_->data[static_cast<size_t>(r) * k + j];
            }
        }
    }
    check_finite(*merged, "lora merge");
    base_ = merged;
    b_->requires_grad = false;
    a_->requires_grad = false;
    merged_ = true;
    return merged;
}

}  // namespace vla
