#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vla/rng.hpp"

namespace vla {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major 64-bit float tensor participating in a dynamically
// recorded reverse-mode autodiff graph. Nodes hold their parents and a
// local backward rule; parameters are leaf tensors with requires_grad set.
class Tensor : public std::enable_shared_from_this<Tensor> {
public:
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily, same length as data
    bool requires_grad = false;

    std::vector<TensorPtr> parents;
    std::function<void(Tensor&)> backward_fn;  // accumulates into parents' grads

    Tensor() = default;
    Tensor(std::vector<int> s, double fill = 0.0);

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    double& at(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
    double at(int i, int j) const { return data[static_cast<size_t>(i) * cols() + j]; }
    double scalar() const;

    void ensure_grad();
    void zero_grad();

    static TensorPtr create(std::vector<int> shape, double fill = 0.0);
    static TensorPtr from_data(std::vector<int> shape, std::vector<double> values);
    static TensorPtr randn(std::vector<int> shape, Rng& rng, double stddev = 1.0);
    // leaf parameter (requires_grad = true)
    static TensorPtr param(std::vector<int> shape, Rng& rng, double stddev);
    static TensorPtr param_zeros(std::vector<int> shape);
};

int64_t shape_size(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Throws if any element is not finite; `where` names the producing op.
void check_finite(const Tensor& t, const char* where);

// ---- graph ----

// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
// reachable tensor with requires_grad; untouched parameters keep zero grad.
void backward(const TensorPtr& loss);

// ---- ops ----

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);        // [m,k]·[k,n]
TensorPtr matmul_nt(const TensorPtr& x, const TensorPtr& w);     // [n,k]·[d,k]ᵀ -> [n,d]
TensorPtr transpose(const TensorPtr& a);
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul_scalar(const TensorPtr& a, double s);
TensorPtr add_row_broadcast(const TensorPtr& x, const TensorPtr& bias);  // bias over rows
TensorPtr gelu(const TensorPtr& x);
TensorPtr softmax_rows(const TensorPtr& x);
TensorPtr layer_norm_rows(const TensorPtr& x, const TensorPtr& gamma,
                          const TensorPtr& beta, double eps = 1e-5);
TensorPtr concat_rows(const std::vector<TensorPtr>& parts);
TensorPtr slice_rows(const TensorPtr& x, int r0, int r1);
TensorPtr slice_cols(const TensorPtr& x, int c0, int c1);
TensorPtr concat_cols(const std::vector<TensorPtr>& parts);
TensorPtr reshape(const TensorPtr& x, std::vector<int> shape);
TensorPtr embedding_rows(const TensorPtr& table, const std::vector<int>& ids);
TensorPtr adaptive_avg_pool_rows(const TensorPtr& x, int bins);
TensorPtr sum_all(const TensorPtr& x);
TensorPtr mean_all(const TensorPtr& x);
TensorPtr mse_loss(const TensorPtr& pred, const TensorPtr& target);
// mean over rows of -log softmax(logits)[target]
TensorPtr cross_entropy_rows(const TensorPtr& logits, const std::vector<int>& targets);

// ---- optimizer ----

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One Adam instance per parameter group (groups may use different rates).
class Adam {
public:
    Adam(std::vector<TensorPtr> params, AdamConfig cfg);
    void step();  // consumes current grads; caller zeroes them afterwards
    void zero_grad();
    int64_t t() const { return t_; }
    const std::vector<TensorPtr>& params() const { return params_; }

private:
    std::vector<TensorPtr> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamConfig cfg_;
    int64_t t_ = 0;
};

// ---- gradient oracle ----

// Central finite differences against analytic gradients.
// `forward` must rebuild the graph and return the scalar loss.
// Returns max over all checked elements of
// |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
double finite_diff_check(const std::function<TensorPtr()>& forward,
                         const std::vector<TensorPtr>& params, double step = 1e-5);

}  // namespace vla
