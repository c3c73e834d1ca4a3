#pragma once

#include <memory>

#include "vla/tensor.hpp"

namespace vla {

// Low-rank adapter on a frozen base weight W0 [d,k]:
//   W0 + (alpha/r) * B A,  B [d,r], A [r,k].
// B starts at zero so the adapted forward equals the base forward at attach
// time. Only B and A receive gradients; W0 stays frozen.
class LoraAdapter {
public:
    static LoraAdapter attach(TensorPtr frozen_weight, int rank, double alpha, Rng& rng);

    // x [n,k] (a single vector is a 1-row matrix) -> [n,d]
    TensorPtr forward(const TensorPtr& x) const;

    // Re-parameterize into a single dense weight W0 + (alpha/r) B A.
    // The adapter is dead afterwards: a second merge or further training is
    // a state error.
    TensorPtr merge();

    double scale() const { return alpha_ / rank_; }
    int rank() const { return rank_; }
    double alpha() const { return alpha_; }
    bool merged() const { return merged_; }
    const TensorPtr& base() const { return base_; }
    const TensorPtr& b() const { return b_; }
    const TensorPtr& a() const { return a_; }
    int64_t trainable_params() const { return b_->size() + a_->size(); }

    // checkpoint restore
    static LoraAdapter restore(TensorPtr base, TensorPtr b, TensorPtr a, double alpha);

private:
    LoraAdapter() = default;
    TensorPtr base_;  // W0 [d,k], frozen
    TensorPtr b_;     // [d,r]
    TensorPtr a_;     // [r,k]
    int rank_ = 0;
    double alpha_ = 1.0;
    bool merged_ = false;
};

}  // namespace vla
