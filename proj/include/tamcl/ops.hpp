#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "tamcl/tensor.hpp"

namespace tamcl {

namespace detail {

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    check(a.shape() == b.shape(), std::string(op) + ": shape mismatch");
}

inline void check_rank2(const Tensor& a, const char* op) {
    check(a.rank() == 2, std::string(op) + ": expected a rank-2 tensor");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Plain vector math, no graph involvement. Used by metrics, data generation
// and as the reference path inside fused graph ops.
// ---------------------------------------------------------------------------

inline std::vector<double> softmax(const std::vector<double>& x) {
    detail::check(!x.empty(), "softmax: empty input");
    double m = *std::max_element(x.begin(), x.end());
    std::vector<double> out(x.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - m);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

inline std::vector<double> log_softmax(const std::vector<double>& x) {
    detail::check(!x.empty(), "log_softmax: empty input");
    double m = *std::max_element(x.begin(), x.end());
    double sum = 0.0;
    for (double v : x) sum += std::exp(v - m);
    double lse = m + std::log(sum);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
    return out;
}

// KL(p || q) over probability vectors. Terms with p_i = 0 contribute zero;
// q is floored at 1e-12 so a zero in q stays finite.
inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    detail::check(p.size() == q.size(), "kl_divergence: length mismatch");
    detail::check(!p.empty(), "kl_divergence: empty input");
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        sum += p[i] * std::log(p[i] / std::max(q[i], 1e-12));
    }
    return sum;
}

inline std::size_t argmax_index(const std::vector<double>& x) {
    detail::check(!x.empty(), "argmax_index: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < x.size(); ++i)
        if (x[i] > x[best]) best = i;
    return best;
}

// ---------------------------------------------------------------------------
// Graph ops. Each returns a new node; the captured raw pointers stay valid
// because the node holds shared ownership of its parents.
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    TensorNode* pa = a.node();
    TensorNode* pb = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [pa, pb](TensorNode& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            if (pa->requires_grad) pa->grad[i] += n.grad[i];
            if (pb->requires_grad) pb->grad[i] += n.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    TensorNode* pa = a.node();
    TensorNode* pb = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [pa, pb](TensorNode& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            if (pa->requires_grad) pa->grad[i] += n.grad[i];
            if (pb->requires_grad) pb->grad[i] -= n.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    TensorNode* pa = a.node();
    TensorNode* pb = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [pa, pb](TensorNode& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            if (pa->requires_grad) pa->grad[i] += n.grad[i] * pb->values[i];
            if (pb->requires_grad) pb->grad[i] += n.grad[i] * pa->values[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
    TensorNode* pa = a.node();
    return make_op(a.shape(), std::move(out), {a}, [pa, c](TensorNode& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * c;
    });
}

// m + v with v broadcast across the rows of m.
inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    detail::check_rank2(m, "add_rowvec");
    detail::check(v.rank() == 1 && v.dim(0) == m.dim(1), "add_rowvec: vector length must equal column count");
    std::size_t rows = m.dim(0), cols = m.dim(1);
    std::vector<double> out(m.numel());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            out[r * cols + c] = m.values()[r * cols + c] + v.values()[c];
    TensorNode* pm = m.node();
    TensorNode* pv = v.node();
    return make_op(m.shape(), std::move(out), {m, v}, [pm, pv, rows, cols](TensorNode& n) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                double g = n.grad[r * cols + c];
                if (pm->requires_grad) pm->grad[r * cols + c] += g;
                if (pv->requires_grad) pv->grad[c] += g;
            }
    });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check_rank2(a, "matmul");
    detail::check_rank2(b, "matmul");
    detail::check(a.dim(1) == b.dim(0), "matmul: inner dimensions disagree");
    std::size_t m = a.dim(0), k = a.dim(1), n2 = b.dim(1);
    std::vector<double> out(m * n2, 0.0);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            double aip = av[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = bv + p * n2;
            double* orow = out.data() + i * n2;
            for (std::size_t j = 0; j < n2; ++j) orow[j] += aip * brow[j];
        }
    TensorNode* pa = a.node();
    TensorNode* pb = b.node();
    return make_op({m, n2}, std::move(out), {a, b}, [pa, pb, m, k, n2](TensorNode& n) {
        // dA = G B^T, dB = A^T G
        if (pa->requires_grad)
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n2; ++j) {
                    double g = n.grad[i * n2 + j];
                    if (g == 0.0) continue;
                    for (std::size_t p = 0; p < k; ++p)
                        pa->grad[i * k + p] += g * pb->values[p * n2 + j];
                }
        if (pb->requires_grad)
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double av2 = pa->values[i * k + p];
                    if (av2 == 0.0) continue;
                    for (std::size_t j = 0; j < n2; ++j)
                        pb->grad[p * n2 + j] += av2 * n.grad[i * n2 + j];
                }
    });
}

inline Tensor transpose(const Tensor& a) {
    detail::check_rank2(a, "transpose");
    std::size_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.values()[i * c + j];
    TensorNode* pa = a.node();
    return make_op({c, r}, std::move(out), {a}, [pa, r, c](TensorNode& n) {
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) pa->grad[i * c + j] += n.grad[j * r + i];
    });
}

inline Tensor reshape(const Tensor& a, std::vector<std::size_t> new_shape) {
    detail::check(shape_numel(new_shape) == a.numel(), "reshape: element count must be preserved");
    TensorNode* pa = a.node();
    return make_op(std::move(new_shape), a.values(), {a}, [pa](TensorNode& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    });
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
    detail::check_rank2(a, "concat_rows");
    detail::check_rank2(b, "concat_rows");
    detail::check(a.dim(1) == b.dim(1), "concat_rows: column counts disagree");
    std::size_t ra = a.dim(0), rb = b.dim(0), c = a.dim(1);
    std::vector<double> out;
    out.reserve((ra + rb) * c);
    out.insert(out.end(), a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    TensorNode* pa = a.node();
    TensorNode* pb = b.node();
    return make_op({ra + rb, c}, std::move(out), {a, b}, [pa, pb, ra, rb, c](TensorNode& n) {
        if (pa->requires_grad)
            for (std::size_t i = 0; i < ra * c; ++i) pa->grad[i] += n.grad[i];
        if (pb->requires_grad)
            for (std::size_t i = 0; i < rb * c; ++i) pb->grad[i] += n.grad[ra * c + i];
    });
}

// Rows [r0, r1) of a.
inline Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
    detail::check_rank2(a, "slice_rows");
    detail::check(r0 < r1 && r1 <= a.dim(0), "slice_rows: row range out of bounds");
    std::size_t c = a.dim(1);
    std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(r0 * c),
                            a.values().begin() + static_cast<std::ptrdiff_t>(r1 * c));
    TensorNode* pa = a.node();
    return make_op({r1 - r0, c}, std::move(out), {a}, [pa, r0, c](TensorNode& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[r0 * c + i] += n.grad[i];
    });
}

// Columns [c0, c1) of a.
inline Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
    detail::check_rank2(a, "slice_cols");
    detail::check(c0 < c1 && c1 <= a.dim(1), "slice_cols: column range out of bounds");
    std::size_t r = a.dim(0), c = a.dim(1), w = c1 - c0;
    std::vector<double> out(r * w);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a.values()[i * c + c0 + j];
    TensorNode* pa = a.node();
    return make_op({r, w}, std::move(out), {a}, [pa, r, c, c0, w](TensorNode& n) {
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) pa->grad[i * c + c0 + j] += n.grad[i * w + j];
    });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    detail::check(!parts.empty(), "concat_cols: empty input");
    std::size_t r = parts[0].dim(0);
    std::size_t total = 0;
    for (const auto& p : parts) {
        detail::check_rank2(p, "concat_cols");
        detail::check(p.dim(0) == r, "concat_cols: row counts disagree");
        total += p.dim(1);
    }
    std::vector<double> out(r * total);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::size_t w = p.dim(1);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * total + off + j] = p.values()[i * w + j];
        off += w;
    }
    std::vector<TensorNode*> nodes;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        nodes.push_back(p.node());
        widths.push_back(p.dim(1));
    }
    return make_op({r, total}, std::move(out), parts, [nodes, widths, r, total](TensorNode& n) {
        std::size_t off2 = 0;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            std::size_t w = widths[k];
            if (nodes[k]->requires_grad)
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < w; ++j)
                        nodes[k]->grad[i * w + j] += n.grad[i * total + off2 + j];
            off2 += w;
        }
    });
}

// Gathers table rows by index; gradients scatter-add back into the table.
inline Tensor embedding_rows(const Tensor& table, const std::vector<std::size_t>& ids) {
    detail::check_rank2(table, "embedding_rows");
    detail::check(!ids.empty(), "embedding_rows: empty index list");
    std::size_t v = table.dim(0), h = table.dim(1);
    for (std::size_t id : ids)
        detail::check(id < v, "embedding_rows: index out of range");
    std::vector<double> out(ids.size() * h);
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < h; ++j) out[i * h + j] = table.values()[ids[i] * h + j];
    TensorNode* pt = table.node();
    std::vector<std::size_t> ids_copy = ids;
    return make_op({ids.size(), h}, std::move(out), {table}, [pt, ids_copy, h](TensorNode& n) {
        for (std::size_t i = 0; i < ids_copy.size(); ++i)
            for (std::size_t j = 0; j < h; ++j)
                pt->grad[ids_copy[i] * h + j] += n.grad[i * h + j];
    });
}

// Layer normalization over the last dimension, with learned gain and bias.
// Uses the population variance of each row.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
    std::size_t rows, cols;
    if (x.rank() == 2) {
        rows = x.dim(0);
        cols = x.dim(1);
    } else if (x.rank() == 1) {
        rows = 1;
        cols = x.dim(0);
    } else {
        throw std::invalid_argument("layer_norm: expected a rank-1 or rank-2 tensor");
    }
    detail::check(gamma.rank() == 1 && gamma.dim(0) == cols, "layer_norm: gain length must equal feature count");
    detail::check(beta.rank() == 1 && beta.dim(0) == cols, "layer_norm: bias length must equal feature count");
    detail::check(eps >= 0.0, "layer_norm: eps must be non-negative");

    std::vector<double> out(x.numel());
    std::vector<double> inv_sigma(rows);
    std::vector<double> xhat(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xv = x.values().data() + r * cols;
        double mean = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mean += xv[c];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            double d = xv[c] - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[r] = is;
        for (std::size_t c = 0; c < cols; ++c) {
            double xh = (xv[c] - mean) * is;
            xhat[r * cols + c] = xh;
            out[r * cols + c] = gamma.values()[c] * xh + beta.values()[c];
        }
    }
    TensorNode* px = x.node();
    TensorNode* pg = gamma.node();
    TensorNode* pb = beta.node();
    return make_op(x.shape(), std::move(out), {x, gamma, beta},
                   [px, pg, pb, rows, cols, inv_sigma, xhat](TensorNode& n) {
                       for (std::size_t r = 0; r < rows; ++r) {
                           const double* g = n.grad.data() + r * cols;
                           const double* xh = xhat.data() + r * cols;
                           if (pg->requires_grad || pb->requires_grad)
                               for (std::size_t c = 0; c < cols; ++c) {
                                   if (pg->requires_grad) pg->grad[c] += g[c] * xh[c];
                                   if (pb->requires_grad) pb->grad[c] += g[c];
                               }
                           if (!px->requires_grad) continue;
                           // dx = (a - mean(a) - xhat * mean(a*xhat)) / sigma, a = gamma * dy
                           double mean_a = 0.0, mean_axh = 0.0;
                           for (std::size_t c = 0; c < cols; ++c) {
                               double a = pg->values[c] * g[c];
                               mean_a += a;
                               mean_axh += a * xh[c];
                           }
                           mean_a /= static_cast<double>(cols);
                           mean_axh /= static_cast<double>(cols);
                           for (std::size_t c = 0; c < cols; ++c) {
                               double a = pg->values[c] * g[c];
                               px->grad[r * cols + c] += (a - mean_a - xh[c] * mean_axh) * inv_sigma[r];
                           }
                       }
                   });
}

// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
inline Tensor gelu(const Tensor& x) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = x.values()[i];
        out[i] = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    }
    TensorNode* px = x.node();
    return make_op(x.shape(), std::move(out), {x}, [px](TensorNode& n) {
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            double v = px->values[i];
            double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
            double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            px->grad[i] += n.grad[i] * (cdf + v * pdf);
        }
    });
}

// Softmax over the last dimension of a rank-1 or rank-2 tensor.
inline Tensor softmax_rows(const Tensor& x) {
    std::size_t rows = x.rank() == 2 ? x.dim(0) : 1;
    std::size_t cols = x.rank() == 2 ? x.dim(1) : x.dim(0);
    detail::check(x.rank() == 1 || x.rank() == 2, "softmax_rows: expected a rank-1 or rank-2 tensor");
    detail::check(cols > 0, "softmax_rows: empty rows");
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xv = x.values().data() + r * cols;
        double m = xv[0];
        for (std::size_t c = 1; c < cols; ++c) m = std::max(m, xv[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            out[r * cols + c] = std::exp(xv[c] - m);
            sum += out[r * cols + c];
        }
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= sum;
    }
    TensorNode* px = x.node();
    return make_op(x.shape(), std::move(out), {x}, [px, rows, cols](TensorNode& n) {
        for (std::size_t r = 0; r < rows; ++r) {
            const double* p = n.values.data() + r * cols;
            const double* g = n.grad.data() + r * cols;
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += g[c] * p[c];
            for (std::size_t c = 0; c < cols; ++c)
                px->grad[r * cols + c] += p[c] * (g[c] - dot);
        }
    });
}

inline Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    TensorNode* px = x.node();
    return make_op({1}, {s}, {x}, [px](TensorNode& n) {
        for (double& g : px->grad) g += n.grad[0];
    });
}

inline Tensor mean_all(const Tensor& x) {
    detail::check(x.numel() > 0, "mean_all: empty input");
    double s = 0.0;
    for (double v : x.values()) s += v;
    double inv = 1.0 / static_cast<double>(x.numel());
    TensorNode* px = x.node();
    return make_op({1}, {s * inv}, {x}, [px, inv](TensorNode& n) {
        for (double& g : px->grad) g += n.grad[0] * inv;
    });
}

// Mean of scalar tensors, e.g. per-sample losses into a batch loss.
inline Tensor mean_of(const std::vector<Tensor>& scalars) {
    detail::check(!scalars.empty(), "mean_of: empty input");
    double s = 0.0;
    std::vector<TensorNode*> nodes;
    for (const auto& t : scalars) {
        detail::check(t.numel() == 1, "mean_of: inputs must be scalars");
        s += t.value();
        nodes.push_back(t.node());
    }
    double inv = 1.0 / static_cast<double>(scalars.size());
    return make_op({1}, {s * inv}, scalars, [nodes, inv](TensorNode& n) {
        for (TensorNode* p : nodes)
            if (p->requires_grad) p->grad[0] += n.grad[0] * inv;
    });
}

// Cross-entropy of a single logit vector against an integer label,
// computed via a stable log-sum-exp.
inline Tensor cross_entropy_logits(const Tensor& logits, std::size_t target) {
    detail::check(logits.rank() == 1, "cross_entropy_logits: expected a rank-1 logit vector");
    detail::check(target < logits.dim(0), "cross_entropy_logits: target out of range");
    const auto& x = logits.values();
    double m = *std::max_element(x.begin(), x.end());
    double sum = 0.0;
    for (double v : x) sum += std::exp(v - m);
    double lse = m + std::log(sum);
    double loss = lse - x[target];
    TensorNode* px = logits.node();
    return make_op({1}, {loss}, {logits}, [px, target, lse](TensorNode& n) {
        // dx = softmax(x) - onehot(target)
        for (std::size_t i = 0; i < px->values.size(); ++i) {
            double p = std::exp(px->values[i] - lse);
            px->grad[i] += n.grad[0] * (p - (i == target ? 1.0 : 0.0));
        }
    });
}

// Cross-entropy of a logit vector against a fixed probability vector:
// sum_k q_k * (lse(x) - x_k). The target distribution is a constant.
inline Tensor soft_cross_entropy(const Tensor& logits, const std::vector<double>& target_probs) {
    detail::check(logits.rank() == 1, "soft_cross_entropy: expected a rank-1 logit vector");
    detail::check(logits.dim(0) == target_probs.size(), "soft_cross_entropy: length mismatch");
    const auto& x = logits.values();
    double m = *std::max_element(x.begin(), x.end());
    double sum = 0.0;
    for (double v : x) sum += std::exp(v - m);
    double lse = m + std::log(sum);
    double loss = 0.0, qsum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        loss += target_probs[i] * (lse - x[i]);
        qsum += target_probs[i];
    }
    TensorNode* px = logits.node();
    std::vector<double> q = target_probs;
    return make_op({1}, {loss}, {logits}, [px, q, lse, qsum](TensorNode& n) {
        for (std::size_t i = 0; i < px->values.size(); ++i) {
            double p = std::exp(px->values[i] - lse);
            px->grad[i] += n.grad[0] * (p * qsum - q[i]);
        }
    });
}

// KL(teacher || student) per row, softmax over the feature dimension,
// averaged over rows. The teacher activations are constants. Identical
// log-softmax code runs on both operands, so equal inputs give exactly zero.
inline Tensor kl_rows_to_const(const Tensor& student, const std::vector<double>& teacher,
                               std::size_t rows, std::size_t cols) {
    detail::check(student.numel() == rows * cols, "kl_rows_to_const: student size mismatch");
    detail::check(teacher.size() == rows * cols, "kl_rows_to_const: teacher size mismatch");
    detail::check(rows > 0 && cols > 0, "kl_rows_to_const: empty input");
    double total = 0.0;
    std::vector<double> t_probs(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        std::vector<double> s_row(student.values().begin() + static_cast<std::ptrdiff_t>(r * cols),
                                  student.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
        std::vector<double> t_row(teacher.begin() + static_cast<std::ptrdiff_t>(r * cols),
                                  teacher.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
        std::vector<double> ls_s = log_softmax(s_row);
        std::vector<double> ls_t = log_softmax(t_row);
        for (std::size_t c = 0; c < cols; ++c) {
            double tp = std::exp(ls_t[c]);
            t_probs[r * cols + c] = tp;
            total += tp * (ls_t[c] - ls_s[c]);
        }
    }
    double inv_rows = 1.0 / static_cast<double>(rows);
    TensorNode* ps = student.node();
    return make_op({1}, {total * inv_rows}, {student},
                   [ps, t_probs, rows, cols, inv_rows](TensorNode& n) {
                       // d/ds = (softmax(s) - softmax(t)) / rows per row
                       for (std::size_t r = 0; r < rows; ++r) {
                           std::vector<double> s_row(ps->values.begin() + static_cast<std::ptrdiff_t>(r * cols),
                                                     ps->values.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
                           std::vector<double> sp = softmax(s_row);
                           for (std::size_t c = 0; c < cols; ++c)
                               ps->grad[r * cols + c] +=
                                   n.grad[0] * (sp[c] - t_probs[r * cols + c]) * inv_rows;
                       }
                   });
}

// sum_i f_i * (theta_i - anchor_i)^2 with f and anchor constant.
inline Tensor quad_penalty(const Tensor& theta, const std::vector<double>& fisher,
                           const std::vector<double>& anchor) {
    detail::check(theta.numel() == fisher.size() && theta.numel() == anchor.size(),
                  "quad_penalty: length mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < fisher.size(); ++i) {
        double d = theta.values()[i] - anchor[i];
        total += fisher[i] * d * d;
    }
    TensorNode* pt = theta.node();
    std::vector<double> f = fisher;
    std::vector<double> a = anchor;
    return make_op({1}, {total}, {theta}, [pt, f, a](TensorNode& n) {
        for (std::size_t i = 0; i < f.size(); ++i)
            pt->grad[i] += n.grad[0] * 2.0 * f[i] * (pt->values[i] - a[i]);
    });
}

// [a0, b0, a1, b1, ...] from equal-length vectors.
inline Tensor interleave(const Tensor& a, const Tensor& b) {
    detail::check(a.rank() == 1 && b.rank() == 1, "interleave: expected rank-1 tensors");
    detail::check(a.dim(0) == b.dim(0), "interleave: length mismatch");
    std::size_t n0 = a.dim(0);
    std::vector<double> out(2 * n0);
    for (std::size_t i = 0; i < n0; ++i) {
        out[2 * i] = a.values()[i];
        out[2 * i + 1] = b.values()[i];
    }
    TensorNode* pa = a.node();
    TensorNode* pb = b.node();
    return make_op({2 * n0}, std::move(out), {a, b}, [pa, pb, n0](TensorNode& n) {
        for (std::size_t i = 0; i < n0; ++i) {
            if (pa->requires_grad) pa->grad[i] += n.grad[2 * i];
            if (pb->requires_grad) pb->grad[i] += n.grad[2 * i + 1];
        }
    });
}

// Halves an even-length vector by averaging adjacent pairs:
// y_k = (x_{2k} + x_{2k+1}) / 2.
inline Tensor pair_average(const Tensor& x) {
    detail::check(x.rank() == 1, "pair_average: expected a rank-1 tensor");
    detail::check(x.dim(0) % 2 == 0 && x.dim(0) > 0, "pair_average: length must be even and positive");
    std::size_t half = x.dim(0) / 2;
    std::vector<double> out(half);
    for (std::size_t k = 0; k < half; ++k)
        out[k] = 0.5 * (x.values()[2 * k] + x.values()[2 * k + 1]);
    TensorNode* px = x.node();
    return make_op({half}, std::move(out), {x}, [px, half](TensorNode& n) {
        for (std::size_t k = 0; k < half; ++k) {
            px->grad[2 * k] += 0.5 * n.grad[k];
            px->grad[2 * k + 1] += 0.5 * n.grad[k];
        }
    });
}

// Single row of a matrix as a rank-1 tensor.
inline Tensor take_row(const Tensor& m, std::size_t r) {
    detail::check_rank2(m, "take_row");
    detail::check(r < m.dim(0), "take_row: row out of bounds");
    std::size_t c = m.dim(1);
    return reshape(slice_rows(m, r, r + 1), {c});
}

// Mean over the rows of a matrix, one value per column.
inline Tensor mean_rows(const Tensor& m) {
    detail::check_rank2(m, "mean_rows");
    std::size_t rows = m.dim(0), cols = m.dim(1);
    detail::check(rows > 0, "mean_rows: empty matrix");
    std::vector<double> out(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c] += m.values()[r * cols + c];
    double inv = 1.0 / static_cast<double>(rows);
    for (double& v : out) v *= inv;
    TensorNode* pm = m.node();
    return make_op({cols}, std::move(out), {m}, [pm, rows, cols, inv](TensorNode& n) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) pm->grad[r * cols + c] += n.grad[c] * inv;
    });
}

}  // namespace tamcl
