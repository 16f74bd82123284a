#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "tamcl/ops.hpp"
#include "tamcl/parameter.hpp"
#include "tamcl/rng.hpp"
#include "tamcl/tensor.hpp"

namespace tamcl {

// Learnable per-task query vector; trainable only while its task is current.
struct TaskToken {
    std::size_t task_index = 0;
    Tensor value;  // G

    TaskToken() = default;
    TaskToken(std::size_t task_index_, std::size_t width, Rng& rng)
        : task_index(task_index_), value(init_normal({width}, rng)) {}

    void register_params(ParameterStore& store, const std::string& prefix) {
        store.add(prefix + ".token", value);
    }
};

// Attention block whose single query row is the task token. The token is
// stacked on top of the sequence, everything is layer-normed, and only the
// token row queries the rest. No residual around the attention itself; the
// MLP that follows is residual.
struct TaskAttentionBlock {
    std::size_t width = 0;  // G
    std::size_t heads = 0;
    Tensor wq, wk, wv;  // G x G, bias-free
    Tensor wo, bo;
    Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;

    TaskAttentionBlock() = default;
    TaskAttentionBlock(std::size_t width_, std::size_t heads_, std::size_t mlp_factor, Rng& rng)
        : width(width_), heads(heads_) {
        if (width == 0 || heads == 0 || width % heads != 0)
            throw std::invalid_argument("task attention: width must be a positive multiple of heads");
        // The attention path has no residual, so the projections are scaled
        // to pass the sequence through at unit gain from the start; tiny
        // init here would cut the head off from the backbone.
        double scale = 1.0 / std::sqrt(double(width));
        wq = init_normal({width, width}, rng, scale);
        wk = init_normal({width, width}, rng, scale);
        wv = init_normal({width, width}, rng, scale);
        wo = init_normal({width, width}, rng, scale);
        bo = init_zeros({width});
        ln1_gain = init_ones({width});
        ln1_bias = init_zeros({width});
        ln2_gain = init_ones({width});
        ln2_bias = init_zeros({width});
        std::size_t mid = mlp_factor * width;
        mlp_w1 = init_normal({width, mid}, rng, scale);
        mlp_b1 = init_zeros({mid});
        mlp_w2 = init_normal({mid, width}, rng, 1.0 / std::sqrt(double(mid)));
        mlp_b2 = init_zeros({width});
    }

    void register_params(ParameterStore& store, const std::string& prefix = "tab") {
        store.add(prefix + ".wq", wq);
        store.add(prefix + ".wk", wk);
        store.add(prefix + ".wv", wv);
        store.add(prefix + ".wo", wo);
        store.add(prefix + ".bo", bo);
        store.add(prefix + ".ln1.gain", ln1_gain);
        store.add(prefix + ".ln1.bias", ln1_bias);
        store.add(prefix + ".ln2.gain", ln2_gain);
        store.add(prefix + ".ln2.bias", ln2_bias);
        store.add(prefix + ".mlp.w1", mlp_w1);
        store.add(prefix + ".mlp.b1", mlp_b1);
        store.add(prefix + ".mlp.w2", mlp_w2);
        store.add(prefix + ".mlp.b2", mlp_b2);
    }

    // token: G, sequence: M x G (M may be 0) -> G.
    Tensor forward(const Tensor& token, const Tensor& sequence,
                   std::vector<Tensor>* attn_trace = nullptr) const {
        if (token.rank() != 1 || token.dim(0) != width)
            throw std::invalid_argument("task attention: token width mismatch");
        Tensor token_row = reshape(token, {1, width});
        Tensor stacked;
        if (sequence.defined() && sequence.numel() > 0) {
            if (sequence.rank() != 2 || sequence.dim(1) != width)
                throw std::invalid_argument("task attention: sequence width mismatch");
            stacked = concat_rows(token_row, sequence);
        } else {
            stacked = token_row;
        }
        Tensor u = layer_norm(stacked, ln1_gain, ln1_bias);
        std::size_t hd = width / heads;
        double scale_factor = 1.0 / std::sqrt(static_cast<double>(hd));
        Tensor q = matmul(slice_rows(u, 0, 1), wq);
        Tensor k = matmul(u, wk);
        Tensor v = matmul(u, wv);
        std::vector<Tensor> head_outs;
        head_outs.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            Tensor qh = slice_cols(q, h * hd, (h + 1) * hd);
            Tensor kh = slice_cols(k, h * hd, (h + 1) * hd);
            Tensor vh = slice_cols(v, h * hd, (h + 1) * hd);
            Tensor attn = softmax_rows(scale(matmul(qh, transpose(kh)), scale_factor));
            if (attn_trace) attn_trace->push_back(attn);
            head_outs.push_back(matmul(attn, vh));
        }
        Tensor o = add_rowvec(matmul(concat_cols(head_outs), wo), bo);  // 1 x G
        Tensor m = layer_norm(o, ln2_gain, ln2_bias);
        Tensor mid = gelu(add_rowvec(matmul(m, mlp_w1), mlp_b1));
        Tensor out = add(o, add_rowvec(matmul(mid, mlp_w2), mlp_b2));
        return reshape(out, {width});
    }
};

// Logit dimensions for a sequence of per-task label counts, where each head
// keeps growing by the previous head's total.
inline std::vector<std::size_t> accumulated_head_dims(const std::vector<std::size_t>& label_counts) {
    std::vector<std::size_t> dims;
    dims.reserve(label_counts.size());
    std::size_t prev = 0;
    for (std::size_t c : label_counts) {
        dims.push_back(c + prev);
        prev = dims.back();
    }
    return dims;
}

// Per-task linear classifier. Native labels of the task occupy the trailing
// slice [offset, offset + native_count); earlier indices are dead weight kept
// for the accumulating-dimension scheme.
struct ClassifierHead {
    std::size_t task_index = 0;
    std::size_t in_width = 0;
    std::size_t total_dim = 0;     // E_i
    std::size_t native_count = 0;  // E_i^orig
    std::size_t offset = 0;        // E_{i-1}
    Tensor weight;                 // in_width x total_dim
    Tensor bias;                   // total_dim

    ClassifierHead() = default;
    ClassifierHead(std::size_t task_index_, std::size_t in_width_, std::size_t native_count_,
                   std::size_t offset_, Rng& rng)
        : task_index(task_index_),
          in_width(in_width_),
          total_dim(native_count_ + offset_),
          native_count(native_count_),
          offset(offset_) {
        if (native_count == 0) throw std::invalid_argument("classifier head: label count must be positive");
        weight = init_normal({in_width, total_dim}, rng);
        bias = init_zeros({total_dim});
    }

    void register_params(ParameterStore& store, const std::string& prefix) {
        store.add(prefix + ".head.weight", weight);
        store.add(prefix + ".head.bias", bias);
    }

    Tensor logits(const Tensor& features) const {
        if (features.rank() != 1 || features.dim(0) != in_width)
            throw std::invalid_argument("classify: feature width mismatch");
        Tensor row = reshape(features, {1, in_width});
        return reshape(add_rowvec(matmul(row, weight), bias), {total_dim});
    }

    // Argmax over the native slice, mapped back to a task-local label.
    std::size_t predict(const Tensor& logit_vec) const {
        const auto& v = logit_vec.values();
        std::size_t best = 0;
        for (std::size_t i = 1; i < native_count; ++i)
            if (v[offset + i] > v[offset + best]) best = i;
        return best;
    }

    std::size_t global_label(std::size_t native_label) const {
        if (native_label >= native_count)
            throw std::invalid_argument("classify: label outside the task's native range");
        return offset + native_label;
    }
};

// Interleaves two pooled branch vectors and halves the result by adjacent
// averaging, so equal branches pass through unchanged.
inline Tensor fuse_dual_representations(const Tensor& branch_a, const Tensor& branch_b) {
    return pair_average(interleave(branch_a, branch_b));
}

}  // namespace tamcl
