#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "tamcl/ops.hpp"
#include "tamcl/tensor.hpp"

namespace tamcl {

// Weight on the distillation term grows with the number of tasks seen, so the
// objective leans further towards retention as the sequence gets longer.
inline double lambda_for(std::size_t tasks_seen) {
    if (tasks_seen < 1) throw std::invalid_argument("lambda_for: tasks_seen must be at least 1");
    return static_cast<double>(tasks_seen - 1) / static_cast<double>(tasks_seen);
}

// KL(teacher || student) on the pre-classifier sequence representation. The
// default softmaxes each sequence position along the hidden dimension and
// averages per-position divergences; flat mode runs one softmax over the
// whole flattened representation instead.
inline Tensor ikd_loss(const Tensor& student, const std::vector<double>& teacher,
                       bool per_position = true) {
    if (student.numel() != teacher.size())
        throw std::invalid_argument("ikd_loss: student and teacher representation shapes differ");
    if (per_position) {
        if (student.rank() != 2)
            throw std::invalid_argument("ikd_loss: expected a positions x hidden representation");
        return kl_rows_to_const(student, teacher, student.dim(0), student.dim(1));
    }
    return kl_rows_to_const(reshape(student, {1, student.numel()}), teacher, 1, student.numel());
}

// Mean over previous task tokens of the soft cross-entropy
// -sum softmax(tau_j) * log softmax(tau_i). Previous tokens are frozen, so
// only the current token receives gradient.
inline Tensor div_loss(const Tensor& current, const std::vector<std::vector<double>>& previous) {
    if (previous.empty()) return Tensor::scalar_constant(0.0);
    Tensor flat = current.rank() == 1 ? current : reshape(current, {current.numel()});
    std::vector<Tensor> terms;
    terms.reserve(previous.size());
    for (const auto& prev : previous) {
        if (prev.size() != flat.numel())
            throw std::invalid_argument("div_loss: token length mismatch");
        terms.push_back(soft_cross_entropy(flat, softmax(prev)));
    }
    return mean_of(terms);
}

// beta = min(L_div, 0.1 * ((1 - lambda) L_c + lambda alpha L_ikd)), computed
// from detached scalar magnitudes.
inline double beta_for(double l_div, double l_c, double l_ikd, double lambda, double alpha) {
    double base = (1.0 - lambda) * l_c + lambda * alpha * l_ikd;
    return std::min(l_div, 0.1 * base);
}

// The beta actually applied in a step: additionally capped so the product
// beta * L_div never exceeds 10% of the base term. Without the extra cap a
// large diversity value (beta = 0.1 * base, L_div > 1) would let the
// diversity term dominate the objective it is meant to merely regularize.
inline double capped_beta(double l_div, double l_c, double l_ikd, double lambda, double alpha) {
    if (l_div <= 0.0) return 0.0;
    double base = (1.0 - lambda) * l_c + lambda * alpha * l_ikd;
    return std::min(beta_for(l_div, l_c, l_ikd, lambda, alpha), 0.1 * base / l_div);
}

struct LossBreakdown {
    double c = 0.0;
    double ikd = 0.0;
    double div = 0.0;
    double total = 0.0;
    double lambda = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    // Differentiable scalar the optimizer steps on.
    Tensor graph;
};

// total = (1 - lambda) L_c + lambda alpha L_ikd + div_sign beta L_div.
// lambda, alpha and beta are detached coefficients; gradient flows only
// through the three loss terms themselves.
inline LossBreakdown total_loss(const Tensor& l_c, const Tensor& l_ikd, const Tensor& l_div,
                                std::size_t tasks_seen, double alpha, double div_sign = 1.0) {
    LossBreakdown out;
    out.c = l_c.value();
    out.ikd = l_ikd.value();
    out.div = l_div.value();
    out.lambda = lambda_for(tasks_seen);
    out.alpha = alpha;
    out.beta = capped_beta(out.div, out.c, out.ikd, out.lambda, alpha);
    Tensor graph = scale(l_c, 1.0 - out.lambda);
    graph = add(graph, scale(l_ikd, out.lambda * alpha));
    graph = add(graph, scale(l_div, div_sign * out.beta));
    out.graph = graph;
    out.total = graph.value();
    return out;
}

}  // namespace tamcl
