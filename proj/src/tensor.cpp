#include "vla/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <unordered_set>

namespace vla {

int64_t shape_size(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(std::vector<int> s, double fill)
    : shape(std::move(s)), data(static_cast<size_t>(shape_size(shape)), fill) {}

double Tensor::scalar() const {
    if (data.size() != 1) {
        throw std::invalid_argument("scalar() on tensor of shape " + shape_str(shape));
    }
    return data[0];
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() { grad.assign(data.size(), 0.0); }

TensorPtr Tensor::create(std::vector<int> shape, double fill) {
    return std::make_shared<Tensor>(std::move(shape), fill);
}

TensorPtr Tensor::from_data(std::vector<int> shape, std::vector<double> values) {
    if (static_cast<int64_t>(values.size()) != shape_size(shape)) {
        throw std::invalid_argument("from_data: " + std::to_string(values.size()) +
                                    " values for shape " + shape_str(shape));
    }
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(values);
    check_finite(*t, "from_data");
    return t;
}

TensorPtr Tensor::randn(std::vector<int> shape, Rng& rng, double stddev) {
    auto t = create(std::move(shape));
    for (auto& v : t->data) v = rng.normal() * stddev;
    return t;
}

TensorPtr Tensor::param(std::vector<int> shape, Rng& rng, double stddev) {
    auto t = randn(std::move(shape), rng, stddev);
    t->requires_grad = true;
    t->ensure_grad();
    return t;
}

TensorPtr Tensor::param_zeros(std::vector<int> shape) {
    auto t = create(std::move(shape));
    t->requires_grad = true;
    t->ensure_grad();
    return t;
}

void check_finite(const Tensor& t, const char* where) {
    for (double v : t.data) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(std::string("non-finite value produced by ") + where);
        }
    }
}

namespace {

TensorPtr make_node(std::vector<int> shape, std::vector<TensorPtr> parents,
                    std::function<void(Tensor&)> backward_fn) {
    auto t = Tensor::create(std::move(shape));
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->requires_grad;
    t->requires_grad = needs;
    if (needs) {
        t->parents = std::move(parents);
        t->backward_fn = std::move(backward_fn);
    }
    return t;
}

void require_matrix(const TensorPtr& t, const char* op) {
    if (t->shape.size() != 2) {
        throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " +
                                    shape_str(t->shape));
    }
}

// ---- raw kernels (row-major, accumulate into c) ----

// c[m,n] += a[m,k] · b[k,n]
void mm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[m,n] += a[m,k] · b[n,k]ᵀ
void mm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

// c[k,n] += a[m,k]ᵀ · b[m,n]
void mm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int p = 0; p < m; ++p) {
        const double* ap = a + static_cast<size_t>(p) * k;
        const double* bp = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < k; ++i) {
            const double av = ap[i];
            double* ci = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

}  // namespace

// ---- ops ----

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const int m = a->shape[0], k = a->shape[1], k2 = b->shape[0], n = b->shape[1];
    if (k != k2) {
        throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(a->shape) +
                                    " vs " + shape_str(b->shape));
    }
    auto out = make_node({m, n}, {a, b}, [m, k, n](Tensor& self) {
        const auto& a = self.parents[0];
        const auto& b = self.parents[1];
        if (a->requires_grad) {
            a->ensure_grad();  // dA += dC · Bᵀ
            mm_nt_acc(self.grad.data(), b->data.data(), a->grad.data(), m, n, k);
        }
        if (b->requires_grad) {
            b->ensure_grad();  // dB += Aᵀ · dC
            mm_tn_acc(a->data.data(), self.grad.data(), b->grad.data(), m, k, n);
        }
    });
    mm_acc(a->data.data(), b->data.data(), out->data.data(), m, k, n);
    check_finite(*out, "matmul");
    return out;
}

TensorPtr matmul_nt(const TensorPtr& x, const TensorPtr& w) {
    require_matrix(x, "matmul_nt");
    require_matrix(w, "matmul_nt");
    const int m = x->shape[0], k = x->shape[1], d = w->shape[0];
    if (w->shape[1] != k) {
        throw std::invalid_argument("matmul_nt: inner dimensions differ, " + shape_str(x->shape) +
                                    " vs " + shape_str(w->shape) + " transposed");
    }
    auto out = make_node({m, d}, {x, w}, [m, k, d](Tensor& self) {
        const auto& x = self.parents[0];
        const auto& w = self.parents[1];
        if (x->requires_grad) {
            x->ensure_grad();  // dX += dY · W
            mm_acc(self.grad.data(), w->data.data(), x->grad.data(), m, d, k);
        }
        if (w->requires_grad) {
            w->ensure_grad();  // dW += dYᵀ · X
            mm_tn_acc(self.grad.data(), x->data.data(), w->grad.data(), m, d, k);
        }
    });
    mm_nt_acc(x->data.data(), w->data.data(), out->data.data(), m, k, d);
    check_finite(*out, "matmul_nt");
    return out;
}

TensorPtr transpose(const TensorPtr& a) {
    require_matrix(a, "transpose");
    const int m = a->shape[0], n = a->shape[1];
    auto out = make_node({n, m}, {a}, [m, n](Tensor& self) {
        const auto& a = self.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j)
                a->grad[static_cast<size_t>(j) * n + i] += self.grad[static_cast<size_t>(i) * m + j];
    });
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out->data[static_cast<size_t>(j) * m + i] = a->data[static_cast<size_t>(i) * n + j];
    return out;
}

namespace {
TensorPtr add_impl(const TensorPtr& a, const TensorPtr& b, double sign_b, const char* op) {
    if (a->shape != b->shape) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a->shape) +
                                    " vs " + shape_str(b->shape));
    }
    auto out = make_node(a->shape, {a, b}, [sign_b](Tensor& self) {
        const auto& a = self.parents[0];
        const auto& b = self.parents[1];
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) b->grad[i] += sign_b * self.grad[i];
        }
    });
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + sign_b * b->data[i];
    check_finite(*out, op);
    return out;
}
}  // namespace

TensorPtr add(const TensorPtr& a, const TensorPtr& b) { return add_impl(a, b, 1.0, "add"); }
TensorPtr sub(const TensorPtr& a, const TensorPtr& b) { return add_impl(a, b, -1.0, "sub"); }

TensorPtr mul_scalar(const TensorPtr& a, double s) {
    auto out = make_node(a->shape, {a}, [s](Tensor& self) {
        const auto& a = self.parents[0];
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += s * self.grad[i];
    });
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = s * a->data[i];
    check_finite(*out, "mul_scalar");
    return out;
}

TensorPtr add_row_broadcast(const TensorPtr& x, const TensorPtr& bias) {
    require_matrix(x, "add_row_broadcast");
    const int m = x->shape[0], n = x->shape[1];
    if (shape_size(bias->shape) != n) {
        throw std::invalid_argument("add_row_broadcast: bias " + shape_str(bias->shape) +
                                    " does not match row width " + std::to_string(n));
    }
    auto out = make_node(x->shape, {x, bias}, [m, n](Tensor& self) {
        const auto& x = self.parents[0];
        const auto& bias = self.parents[1];
        if (x->requires_grad) {
            x->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) x->grad[i] += self.grad[i];
        }
        if (bias->requires_grad) {
            bias->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    bias->grad[j] += self.grad[static_cast<size_t>(i) * n + j];
        }
    });
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out->data[static_cast<size_t>(i) * n + j] = x->data[static_cast<size_t>(i) * n + j] + bias->data[j];
    check_finite(*out, "add_row_broadcast");
    return out;
}

TensorPtr gelu(const TensorPtr& x) {
    // exact erf form; derivative Phi(x) + x * phi(x)
    auto out = make_node(x->shape, {x}, [](Tensor& self) {
        const auto& x = self.parents[0];
        if (!x->requires_grad) return;
        x->ensure_grad();
        constexpr double inv_sqrt2 = 0.70710678118654752440;
        constexpr double inv_sqrt2pi = 0.39894228040143267794;
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const double v = x->data[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            x->grad[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    for (size_t i = 0; i < out->data.size(); ++i) {
        const double v = x->data[i];
        out->data[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
    }
    check_finite(*out, "gelu");
    return out;
}

TensorPtr softmax_rows(const TensorPtr& x) {
    if (shape_size(x->shape) < 1) throw std::invalid_argument("softmax: empty input");
    const int n = x->cols();
    const int m = static_cast<int>(shape_size(x->shape)) / n;
    auto out = make_node(x->shape, {x}, [m, n](Tensor& self) {
        const auto& x = self.parents[0];
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int i = 0; i < m; ++i) {
            const double* y = self.data.data() + static_cast<size_t>(i) * n;
            const double* dy = self.grad.data() + static_cast<size_t>(i) * n;
            double* dx = x->grad.data() + static_cast<size_t>(i) * n;
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += y[j] * dy[j];
            for (int j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
    });
    for (int i = 0; i < m; ++i) {
        const double* xi = x->data.data() + static_cast<size_t>(i) * n;
        double* yi = out->data.data() + static_cast<size_t>(i) * n;
        double mx = xi[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            sum += yi[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < n; ++j) yi[j] *= inv;
    }
    check_finite(*out, "softmax");
    return out;
}

TensorPtr layer_norm_rows(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                          double eps) {
    const int n = x->cols();
    const int m = static_cast<int>(shape_size(x->shape)) / n;
    if (n < 2) throw std::invalid_argument("layer_norm: degenerate input width " + std::to_string(n));
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
    if (shape_size(gamma->shape) != n || shape_size(beta->shape) != n) {
        throw std::invalid_argument("layer_norm: affine params do not match width " +
                                    std::to_string(n));
    }
    auto out = make_node(x->shape, {x, gamma, beta}, [m, n, eps](Tensor& self) {
        const auto& x = self.parents[0];
        const auto& gamma = self.parents[1];
        const auto& beta = self.parents[2];
        for (int i = 0; i < m; ++i) {
            const double* xi = x->data.data() + static_cast<size_t>(i) * n;
            const double* dy = self.grad.data() + static_cast<size_t>(i) * n;
            double mean = 0.0;
            for (int j = 0; j < n; ++j) mean += xi[j];
            mean /= n;
            double var = 0.0;
            for (int j = 0; j < n; ++j) var += (xi[j] - mean) * (xi[j] - mean);
            var /= n;
            const double inv_std = 1.0 / std::sqrt(var + eps);
            if (gamma->requires_grad || beta->requires_grad) {
                gamma->ensure_grad();
                beta->ensure_grad();
                for (int j = 0; j < n; ++j) {
                    gamma->grad[j] += dy[j] * (xi[j] - mean) * inv_std;
                    beta->grad[j] += dy[j];
                }
            }
            if (x->requires_grad) {
                x->ensure_grad();
                double* dx = x->grad.data() + static_cast<size_t>(i) * n;
                // dL/dxhat
                double sum_g = 0.0, sum_gx = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double g = dy[j] * gamma->data[j];
                    const double xhat = (xi[j] - mean) * inv_std;
                    sum_g += g;
                    sum_gx += g * xhat;
                }
                for (int j = 0; j < n; ++j) {
                    const double g = dy[j] * gamma->data[j];
                    const double xhat = (xi[j] - mean) * inv_std;
                    dx[j] += inv_std * (g - sum_g / n - xhat * sum_gx / n);
                }
            }
        }
    });
    for (int i = 0; i < m; ++i) {
        const double* xi = x->data.data() + static_cast<size_t>(i) * n;
        double* yi = out->data.data() + static_cast<size_t>(i) * n;
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += xi[j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var /= n;
        const double inv_std = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < n; ++j) {
            yi[j] = gamma->data[j] * ((xi[j] - mean) * inv_std) + beta->data[j];
        }
    }
    check_finite(*out, "layer_norm");
    return out;
}

TensorPtr concat_rows(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    const int n = parts[0]->cols();
    int m = 0;
    for (const auto& p : parts) {
        require_matrix(p, "concat_rows");
        if (p->shape[1] != n) throw std::invalid_argument("concat_rows: column mismatch");
        m += p->shape[0];
    }
    auto out = make_node({m, n}, parts, [n](Tensor& self) {
        int r = 0;
        for (auto& p : self.parents) {
            const int pm = p->shape[0];
            if (p->requires_grad) {
                p->ensure_grad();
                for (int i = 0; i < pm * n; ++i)
                    p->grad[i] += self.grad[static_cast<size_t>(r) * n + i];
            }
            r += pm;
        }
    });
    int r = 0;
    for (const auto& p : parts) {
        std::copy(p->data.begin(), p->data.end(), out->data.begin() + static_cast<size_t>(r) * n);
        r += p->shape[0];
    }
    return out;
}

TensorPtr slice_rows(const TensorPtr& x, int r0, int r1) {
    require_matrix(x, "slice_rows");
    const int m = x->shape[0], n = x->shape[1];
    if (r0 < 0 || r1 > m || r0 >= r1) throw std::invalid_argument("slice_rows: bad range");
    auto out = make_node({r1 - r0, n}, {x}, [r0, n](Tensor& self) {
        const auto& x = self.parents[0];
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            x->grad[static_cast<size_t>(r0) * n + i] += self.grad[i];
    });
    std::copy(x->data.begin() + static_cast<size_t>(r0) * n,
              x->data.begin() + static_cast<size_t>(r1) * n, out->data.begin());
    return out;
}

TensorPtr slice_cols(const TensorPtr& x, int c0, int c1) {
    require_matrix(x, "slice_cols");
    const int m = x->shape[0], n = x->shape[1];
    if (c0 < 0 || c1 > n || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    const int w = c1 - c0;
    auto out = make_node({m, w}, {x}, [m, n, c0, w](Tensor& self) {
        const auto& x = self.parents[0];
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                x->grad[static_cast<size_t>(i) * n + c0 + j] += self.grad[static_cast<size_t>(i) * w + j];
    });
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
            out->data[static_cast<size_t>(i) * w + j] = x->data[static_cast<size_t>(i) * n + c0 + j];
    return out;
}

TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const int m = parts[0]->rows();
    int n = 0;
    for (const auto& p : parts) {
        require_matrix(p, "concat_cols");
        if (p->shape[0] != m) throw std::invalid_argument("concat_cols: row mismatch");
        n += p->shape[1];
    }
    auto out = make_node({m, n}, parts, [m, n](Tensor& self) {
        int c = 0;
        for (auto& p : self.parents) {
            const int pw = p->shape[1];
            if (p->requires_grad) {
                p->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < pw; ++j)
                        p->grad[static_cast<size_t>(i) * pw + j] +=
                            self.grad[static_cast<size_t>(i) * n + c + j];
            }
            c += pw;
        }
    });
    int c = 0;
    for (const auto& p : parts) {
        const int pw = p->shape[1];
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < pw; ++j)
                out->data[static_cast<size_t>(i) * n + c + j] = p->data[static_cast<size_t>(i) * pw + j];
        c += pw;
    }
    return out;
}

TensorPtr reshape(const TensorPtr& x, std::vector<int> shape) {
    if (shape_size(shape) != shape_size(x->shape)) {
        throw std::invalid_argument("reshape: size mismatch " + shape_str(x->shape) + " -> " +
                                    shape_str(shape));
    }
    auto out = make_node(std::move(shape), {x}, [](Tensor& self) {
        const auto& x = self.parents[0];
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) x->grad[i] += self.grad[i];
    });
    out->data = x->data;
    return out;
}

TensorPtr embedding_rows(const TensorPtr& table, const std::vector<int>& ids) {
    require_matrix(table, "embedding_rows");
    const int v = table->shape[0], d = table->shape[1];
    for (int id : ids) {
        if (id < 0 || id >= v) throw std::invalid_argument("embedding_rows: id out of range");
    }
    auto idcopy = ids;
    auto out = make_node({static_cast<int>(ids.size()), d}, {table},
                         [idcopy, d](Tensor& self) {
                             const auto& table = self.parents[0];
                             if (!table->requires_grad) return;
                             table->ensure_grad();
                             for (size_t i = 0; i < idcopy.size(); ++i)
                                 for (int j = 0; j < d; ++j)
                                     table->grad[static_cast<size_t>(idcopy[i]) * d + j] +=
                                         self.grad[i * d + j];
                         });
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy(table->data.begin() + static_cast<size_t>(ids[i]) * d,
                  table->data.begin() + static_cast<size_t>(ids[i] + 1) * d,
                  out->data.begin() + i * d);
    return out;
}

TensorPtr adaptive_avg_pool_rows(const TensorPtr& x, int bins) {
    require_matrix(x, "adaptive_avg_pool_rows");
    const int m = x->shape[0], n = x->shape[1];
    if (m < 1) throw std::invalid_argument("adaptive_avg_pool_rows: empty sequence");
    if (bins < 1) throw std::invalid_argument("adaptive_avg_pool_rows: bins must be positive");
    // bin b covers rows [floor(b*m/bins), floor((b+1)*m/bins))
    auto out = make_node({bins, n}, {x}, [m, n, bins](Tensor& self) {
        const auto& x = self.parents[0];
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int b = 0; b < bins; ++b) {
            const int r0 = static_cast<int>(static_cast<int64_t>(b) * m / bins);
            const int r1 = static_cast<int>(static_cast<int64_t>(b + 1) * m / bins);
            const double inv = 1.0 / std::max(1, r1 - r0);
            for (int i = r0; i < r1; ++i)
                for (int j = 0; j < n; ++j)
                    x->grad[static_cast<size_t>(i) * n + j] +=
                        inv * self.grad[static_cast<size_t>(b) * n + j];
        }
    });
    for (int b = 0; b < bins; ++b) {
        const int r0 = static_cast<int>(static_cast<int64_t>(b) * m / bins);
        const int r1 = static_cast<int>(static_cast<int64_t>(b + 1) * m / bins);
        const double inv = 1.0 / std::max(1, r1 - r0);
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int i = r0; i < r1; ++i) acc += x->data[static_cast<size_t>(i) * n + j];
            out->data[static_cast<size_t>(b) * n + j] = acc * inv;
        }
    }
    return out;
}

TensorPtr sum_all(const TensorPtr& x) {
    auto out = make_node({1}, {x}, [](Tensor& self) {
        const auto& x = self.parents[0];
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (auto& g : x->grad) g += self.grad[0];
    });
    double acc = 0.0;
    for (double v : x->data) acc += v;
    out->data[0] = acc;
    check_finite(*out, "sum_all");
    return out;
}

TensorPtr mean_all(const TensorPtr& x) {
    return mul_scalar(sum_all(x), 1.0 / static_cast<double>(shape_size(x->shape)));
}

TensorPtr mse_loss(const TensorPtr& pred, const TensorPtr& target) {
    if (pred->shape != target->shape) {
        throw std::invalid_argument("mse_loss: shape mismatch " + shape_str(pred->shape) + " vs " +
                                    shape_str(target->shape));
    }
    const int64_t n = shape_size(pred->shape);
    auto out = make_node({1}, {pred, target}, [n](Tensor& self) {
        const auto& pred = self.parents[0];
        const auto& target = self.parents[1];
        const double scale = 2.0 / static_cast<double>(n) * self.grad[0];
        if (pred->requires_grad) {
            pred->ensure_grad();
            for (int64_t i = 0; i < n; ++i)
                pred->grad[i] += scale * (pred->data[i] - target->data[i]);
        }
        if (target->requires_grad) {
            target->ensure_grad();
            for (int64_t i = 0; i < n; ++i)
                target->grad[i] -= scale * (pred->data[i] - target->data[i]);
        }
    });
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = pred->data[i] - target->data[i];
        acc += d * d;
    }
    out->data[0] = acc / static_cast<double>(n);
    check_finite(*out, "mse_loss");
    return out;
}

TensorPtr cross_entropy_rows(const TensorPtr& logits, const std::vector<int>& targets) {
    require_matrix(logits, "cross_entropy_rows");
    const int m = logits->shape[0], n = logits->shape[1];
    if (static_cast<int>(targets.size()) != m) {
        throw std::invalid_argument("cross_entropy_rows: target count mismatch");
    }
    for (int t : targets) {
        if (t < 0 || t >= n) throw std::invalid_argument("cross_entropy_rows: target out of range");
    }
    auto probs = softmax_rows(logits);  // reuse softmax node for its backward
    auto tg = targets;
    auto out = make_node({1}, {probs}, [m, n, tg](Tensor& self) {
        const auto& probs = self.parents[0];
        if (!probs->requires_grad) return;
        probs->ensure_grad();
        const double scale = self.grad[0] / m;
        for (int i = 0; i < m; ++i) {
            const double p = probs->data[static_cast<size_t>(i) * n + tg[i]];
            probs->grad[static_cast<size_t>(i) * n + tg[i]] -= scale / std::max(p, 1e-300);
        }
    });
    double acc = 0.0;
    for (int i = 0; i < m; ++i) {
        acc -= std::log(std::max(probs->data[static_cast<size_t>(i) * n + targets[i]], 1e-300));
    }
    out->data[0] = acc / m;
    check_finite(*out, "cross_entropy_rows");
    return out;
}

// ---- backward ----

void backward(const TensorPtr& loss) {
    if (shape_size(loss->shape) != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss->shape));
    }
    // iterative topological sort over the requires_grad subgraph
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> visited;
    std::vector<std::pair<Tensor*, size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Tensor* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

// ---- Adam ----

Adam::Adam(std::vector<TensorPtr> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p->data.size(), 0.0);
        v_.emplace_back(p->data.size(), 0.0);
        p->ensure_grad();
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        auto& p = *params_[pi];
        if (p.grad.size() != p.data.size()) {
            throw std::invalid_argument("adam_step: grad/param shape mismatch");
        }
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (size_t i = 0; i < p.data.size(); ++i) {
            const double g = p.grad[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        check_finite(p, "adam_step");
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

// ---- finite differences ----

double finite_diff_check(const std::function<TensorPtr()>& forward,
                         const std::vector<TensorPtr>& params, double step) {
    if (step <= 0.0) throw std::invalid_argument("finite_diff_check: step must be positive");
    for (const auto& p : params) p->zero_grad();
    auto loss = forward();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) {
        p->ensure_grad();
        analytic.push_back(p->grad);
    }
    double max_err = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = *params[pi];
        for (size_t i = 0; i < p.data.size(); ++i) {
            const double orig = p.data[i];
            p.data[i] = orig + step;
            const double up = forward()->scalar();
            p.data[i] = orig - step;
            const double down = forward()->scalar();
            p.data[i] = orig;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw std::runtime_error("finite_diff_check: non-finite loss at perturbed point");
            }
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[pi][i];
            const double err = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace vla
