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

struct BackboneConfig {
    std::size_t depth = 2;
    std::size_t hidden = 32;
    std::size_t heads = 2;
    std::size_t mlp_factor = 4;
    std::size_t patch = 4;

    void validate() const {
        if (hidden == 0 || heads == 0 || hidden % heads != 0)
            throw std::invalid_argument("backbone config: hidden must be a positive multiple of heads");
        if (mlp_factor == 0) throw std::invalid_argument("backbone config: mlp_factor must be positive");
        if (patch == 0) throw std::invalid_argument("backbone config: patch must be positive");
    }
};

struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;
    std::vector<double> values;  // row-major (row, col, channel)
};

// Splits an image into row-major non-overlapping PxP patches, each flattened
// row-major over (row, col, channel).
inline std::vector<std::vector<double>> patchify(const Image& img, std::size_t patch) {
    if (patch == 0 || img.height % patch != 0 || img.width % patch != 0)
        throw std::invalid_argument("patchify: image dimensions must be divisible by the patch size");
    if (img.values.size() != img.height * img.width * img.channels)
        throw std::invalid_argument("patchify: value count does not match image dimensions");
    std::size_t rows = img.height / patch, cols = img.width / patch;
    std::vector<std::vector<double>> out;
    out.reserve(rows * cols);
    for (std::size_t pr = 0; pr < rows; ++pr)
        for (std::size_t pc = 0; pc < cols; ++pc) {
            std::vector<double> flat;
            flat.reserve(patch * patch * img.channels);
            for (std::size_t r = 0; r < patch; ++r)
                for (std::size_t c = 0; c < patch; ++c)
                    for (std::size_t ch = 0; ch < img.channels; ++ch)
                        flat.push_back(
                            img.values[((pr * patch + r) * img.width + pc * patch + c) * img.channels + ch]);
            out.push_back(std::move(flat));
        }
    return out;
}

// Linear patch projection with class token, learned positions and a modality
// type vector. The position table fixes the patch count at construction.
struct PatchEmbedder {
    std::size_t patch_len = 0;  // P*P*C
    std::size_t num_patches = 0;
    std::size_t hidden = 0;
    Tensor proj;      // patch_len x H
    Tensor pos;       // (N+1) x H
    Tensor cls;       // H
    Tensor type_vec;  // H

    PatchEmbedder() = default;
    PatchEmbedder(std::size_t patch_len_, std::size_t num_patches_, std::size_t hidden_, Rng& rng)
        : patch_len(patch_len_), num_patches(num_patches_), hidden(hidden_) {
        proj = init_normal({patch_len, hidden}, rng);
        pos = init_normal({num_patches + 1, hidden}, rng);
        cls = init_normal({hidden}, rng);
        type_vec = init_normal({hidden}, rng);
    }

    void register_params(ParameterStore& store, const std::string& prefix) {
        store.add(prefix + ".proj", proj);
        store.add(prefix + ".pos", pos);
        store.add(prefix + ".cls", cls);
        store.add(prefix + ".type", type_vec);
    }

    // [cls; patch_i * proj] + pos, one row per patch plus the class row.
    Tensor embed(const std::vector<std::vector<double>>& patches) const {
        if (patches.size() != num_patches)
            throw std::invalid_argument("embed_image: patch count does not match the position table");
        std::vector<double> flat;
        flat.reserve(patches.size() * patch_len);
        for (const auto& p : patches) {
            if (p.size() != patch_len)
                throw std::invalid_argument("embed_image: patch length does not match the projection");
            flat.insert(flat.end(), p.begin(), p.end());
        }
        Tensor projected = matmul(Tensor::constant({num_patches, patch_len}, std::move(flat)), proj);
        Tensor with_cls = concat_rows(reshape(cls, {1, hidden}), projected);
        return add(with_cls, pos);
    }
};

// Token embedding lookup with class token and learned positions.
struct TextEmbedder {
    std::size_t vocab = 0;
    std::size_t max_len = 0;
    std::size_t hidden = 0;
    Tensor table;     // vocab x H
    Tensor pos;       // (L+1) x H
    Tensor cls;       // H
    Tensor type_vec;  // H

    TextEmbedder() = default;
    TextEmbedder(std::size_t vocab_, std::size_t max_len_, std::size_t hidden_, Rng& rng)
        : vocab(vocab_), max_len(max_len_), hidden(hidden_) {
        table = init_normal({vocab, hidden}, rng);
        pos = init_normal({max_len + 1, hidden}, rng);
        cls = init_normal({hidden}, rng);
        type_vec = init_normal({hidden}, rng);
    }

    void register_params(ParameterStore& store, const std::string& prefix) {
        store.add(prefix + ".table", table);
        store.add(prefix + ".pos", pos);
        store.add(prefix + ".cls", cls);
        store.add(prefix + ".type", type_vec);
    }

    Tensor embed(const std::vector<std::size_t>& token_ids) const {
        if (token_ids.size() > max_len)
            throw std::invalid_argument("embed_text: sequence longer than the position table");
        for (std::size_t id : token_ids)
            if (id >= vocab) throw std::invalid_argument("embed_text: token id outside the vocabulary");
        Tensor with_cls = token_ids.empty()
                              ? reshape(cls, {1, hidden})
                              : concat_rows(reshape(cls, {1, hidden}), embedding_rows(table, token_ids));
        return add(with_cls, slice_rows(pos, 0, token_ids.size() + 1));
    }
};

// Pre-norm residual block: z + MSA(LN(z)), then + MLP(LN(.)).
struct SelfAttentionBlock {
    std::size_t hidden = 0;
    std::size_t heads = 0;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;

    SelfAttentionBlock() = default;
    SelfAttentionBlock(std::size_t hidden_, std::size_t heads_, std::size_t mlp_factor, Rng& rng)
        : hidden(hidden_), heads(heads_) {
        wq = init_normal({hidden, hidden}, rng);
        bq = init_zeros({hidden});
        wk = init_normal({hidden, hidden}, rng);
        bk = init_zeros({hidden});
        wv = init_normal({hidden, hidden}, rng);
        bv = init_zeros({hidden});
        wo = init_normal({hidden, hidden}, rng);
        bo = init_zeros({hidden});
        ln1_gain = init_ones({hidden});
        ln1_bias = init_zeros({hidden});
        ln2_gain = init_ones({hidden});
        ln2_bias = init_zeros({hidden});
        std::size_t mid = mlp_factor * hidden;
        mlp_w1 = init_normal({hidden, mid}, rng);
        mlp_b1 = init_zeros({mid});
        mlp_w2 = init_normal({mid, hidden}, rng);
        mlp_b2 = init_zeros({hidden});
    }

    void register_params(ParameterStore& store, const std::string& prefix) {
        store.add(prefix + ".attn.wq", wq);
        store.add(prefix + ".attn.bq", bq);
        store.add(prefix + ".attn.wk", wk);
        store.add(prefix + ".attn.bk", bk);
        store.add(prefix + ".attn.wv", wv);
        store.add(prefix + ".attn.bv", bv);
        store.add(prefix + ".attn.wo", wo);
        store.add(prefix + ".attn.bo", bo);
        store.add(prefix + ".ln1.gain", ln1_gain);
        store.add(prefix + ".ln1.bias", ln1_bias);
        store.add(prefix + ".ln2.gain", ln2_gain);
        store.add(prefix + ".ln2.bias", ln2_bias);
        store.add(prefix + ".mlp.w1", mlp_w1);
        store.add(prefix + ".mlp.b1", mlp_b1);
        store.add(prefix + ".mlp.w2", mlp_w2);
        store.add(prefix + ".mlp.b2", mlp_b2);
    }

    // attn_trace, when given, collects the per-head attention probability
    // matrices of this block.
    Tensor forward(const Tensor& z, std::vector<Tensor>* attn_trace = nullptr) const {
        std::size_t hd = hidden / heads;
        double scale_factor = 1.0 / std::sqrt(static_cast<double>(hd));
        Tensor u = layer_norm(z, ln1_gain, ln1_bias);
        Tensor q = add_rowvec(matmul(u, wq), bq);
        Tensor k = add_rowvec(matmul(u, wk), bk);
        Tensor v = add_rowvec(matmul(u, wv), bv);
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
        Tensor attn_out = add_rowvec(matmul(concat_cols(head_outs), wo), bo);
        Tensor z1 = add(z, attn_out);
        Tensor m = layer_norm(z1, ln2_gain, ln2_bias);
        Tensor mid = gelu(add_rowvec(matmul(m, mlp_w1), mlp_b1));
        return add(z1, add_rowvec(matmul(mid, mlp_w2), mlp_b2));
    }
};

// Image and text embedders plus a stack of self-attention blocks producing
// the fused sequence representation.
struct Backbone {
    BackboneConfig config;
    std::size_t img_h = 0, img_w = 0, img_c = 0;
    PatchEmbedder image_embed;
    TextEmbedder text_embed;
    std::vector<SelfAttentionBlock> blocks;

    Backbone() = default;
    Backbone(const BackboneConfig& cfg, std::size_t img_h_, std::size_t img_w_, std::size_t img_c_,
             std::size_t vocab, std::size_t max_len, Rng& rng)
        : config(cfg), img_h(img_h_), img_w(img_w_), img_c(img_c_) {
        cfg.validate();
        if (img_h % cfg.patch != 0 || img_w % cfg.patch != 0)
            throw std::invalid_argument("backbone: image dimensions must be divisible by the patch size");
        std::size_t n = (img_h / cfg.patch) * (img_w / cfg.patch);
        image_embed = PatchEmbedder(cfg.patch * cfg.patch * img_c, n, cfg.hidden, rng);
        text_embed = TextEmbedder(vocab, max_len, cfg.hidden, rng);
        blocks.reserve(cfg.depth);
        for (std::size_t d = 0; d < cfg.depth; ++d)
            blocks.emplace_back(cfg.hidden, cfg.heads, cfg.mlp_factor, rng);
    }

    void register_params(ParameterStore& store, const std::string& prefix = "backbone") {
        image_embed.register_params(store, prefix + ".img");
        text_embed.register_params(store, prefix + ".txt");
        for (std::size_t d = 0; d < blocks.size(); ++d)
            blocks[d].register_params(store, prefix + ".sab" + std::to_string(d));
    }

    // Modality type vectors are added to the finished embeddings, then the
    // image rows are stacked above the text rows.
    Tensor fuse(const Tensor& image_seq, const Tensor& text_seq) const {
        if (image_seq.rank() != 2 || text_seq.rank() != 2 ||
            image_seq.dim(1) != config.hidden || text_seq.dim(1) != config.hidden)
            throw std::invalid_argument("fuse_sequences: both sequences must have the backbone width");
        return concat_rows(add_rowvec(image_seq, image_embed.type_vec),
                           add_rowvec(text_seq, text_embed.type_vec));
    }

    Tensor encode(const Tensor& s0, std::vector<Tensor>* attn_trace = nullptr) const {
        if (s0.rank() != 2 || s0.dim(1) != config.hidden)
            throw std::invalid_argument("encode: sequence width must equal the backbone hidden size");
        Tensor z = s0;
        for (const auto& block : blocks) z = block.forward(z, attn_trace);
        return z;
    }

    // Full pipeline for one image/text pair.
    Tensor represent(const Image& img, const std::vector<std::size_t>& token_ids,
                     std::vector<Tensor>* attn_trace = nullptr) const {
        Tensor v = image_embed.embed(patchify(img, config.patch));
        Tensor t = text_embed.embed(token_ids);
        return encode(fuse(v, t), attn_trace);
    }
};

}  // namespace tamcl
