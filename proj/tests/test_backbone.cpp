#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "support/gradcheck.hpp"
#include "tamcl/backbone.hpp"

using namespace tamcl;
using namespace tamcl::testing;

namespace {

Image sequential_image(std::size_t h, std::size_t w, std::size_t c = 1) {
    Image img{h, w, c, {}};
    img.values.resize(h * w * c);
    for (std::size_t i = 0; i < img.values.size(); ++i) img.values[i] = static_cast<double>(i);
    return img;
}

Image random_image(std::size_t h, std::size_t w, Rng& rng) {
    Image img{h, w, 1, random_vector(h * w, rng)};
    return img;
}

void zero_out(Tensor& t) {
    for (double& v : t.mutable_values()) v = 0.0;
}

}  // namespace

TEST_CASE("patchify splits row-major and flattens row-major") {
    auto patches = patchify(sequential_image(4, 4), 2);
    REQUIRE(patches.size() == 4);
    for (const auto& p : patches) REQUIRE(p.size() == 4);
    CHECK(patches[0] == std::vector<double>{0, 1, 4, 5});
    CHECK(patches[1] == std::vector<double>{2, 3, 6, 7});
    CHECK(patches[2] == std::vector<double>{8, 9, 12, 13});
    CHECK(patches[3] == std::vector<double>{10, 11, 14, 15});
}

TEST_CASE("patchify with patch equal to image yields one whole-image patch") {
    auto img = sequential_image(3, 3);
    auto patches = patchify(img, 3);
    REQUIRE(patches.size() == 1);
    CHECK(patches[0] == img.values);
}

TEST_CASE("patchify rejects non-divisible dimensions") {
    CHECK_THROWS_AS(patchify(sequential_image(5, 4), 2), std::invalid_argument);
    CHECK_THROWS_AS(patchify(sequential_image(4, 5), 2), std::invalid_argument);
}

TEST_CASE("patchify keeps channels interleaved per pixel") {
    Image img = sequential_image(2, 2, 2);  // values 0..7, pixel (r,c) holds {2k, 2k+1}
    auto patches = patchify(img, 2);
    REQUIRE(patches.size() == 1);
    CHECK(patches[0] == std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7});
}

TEST_CASE("embed_image shape and zero case") {
    Rng rng(5);
    PatchEmbedder pe(4, 4, 8, rng);
    std::vector<std::vector<double>> patches(4, std::vector<double>(4, 1.0));
    Tensor out = pe.embed(patches);
    REQUIRE(out.shape() == std::vector<std::size_t>{5, 8});

    zero_out(pe.pos);
    zero_out(pe.cls);
    std::vector<std::vector<double>> zeros(4, std::vector<double>(4, 0.0));
    Tensor z = pe.embed(zeros);
    for (double v : z.values()) CHECK(v == 0.0);
}

TEST_CASE("identical patches differ only by position rows") {
    Rng rng(6);
    PatchEmbedder pe(4, 3, 8, rng);
    std::vector<std::vector<double>> patches(3, std::vector<double>(4, 0.5));
    Tensor out = pe.embed(patches);
    // subtracting each row's position embedding leaves equal rows
    for (std::size_t r = 1; r + 1 < out.dim(0); ++r)
        for (std::size_t c = 0; c < 8; ++c) {
            double a = out.values()[r * 8 + c] - pe.pos.values()[r * 8 + c];
            double b = out.values()[(r + 1) * 8 + c] - pe.pos.values()[(r + 1) * 8 + c];
            CHECK(a == Catch::Approx(b).margin(1e-12));
        }
}

TEST_CASE("embed_image rejects mismatched patch length") {
    Rng rng(7);
    PatchEmbedder pe(4, 2, 8, rng);
    CHECK_THROWS_AS(pe.embed({{1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}}), std::invalid_argument);
    CHECK_THROWS_AS(pe.embed({std::vector<double>(4, 0.0)}), std::invalid_argument);
}

TEST_CASE("embed_text shapes") {
    Rng rng(8);
    TextEmbedder te(10, 12, 8, rng);
    CHECK(te.embed({1, 2, 3, 4, 5}).shape() == std::vector<std::size_t>{6, 8});
    CHECK(te.embed({}).shape() == std::vector<std::size_t>{1, 8});
    CHECK_THROWS_AS(te.embed({10}), std::invalid_argument);
    CHECK_THROWS_AS(te.embed(std::vector<std::size_t>(13, 0)), std::invalid_argument);
}

TEST_CASE("repeated token rows differ exactly by position rows") {
    Rng rng(9);
    TextEmbedder te(10, 6, 8, rng);
    Tensor out = te.embed({4, 4});
    // token rows are 1 and 2
    for (std::size_t c = 0; c < 8; ++c) {
        double row_diff = out.values()[1 * 8 + c] - out.values()[2 * 8 + c];
        double pos_diff = te.pos.values()[1 * 8 + c] - te.pos.values()[2 * 8 + c];
        CHECK(row_diff == Catch::Approx(pos_diff).margin(1e-12));
    }
}

TEST_CASE("fuse_sequences concatenates after adding type vectors") {
    Rng rng(10);
    Backbone bb(BackboneConfig{1, 8, 2, 2, 2}, 4, 4, 1, 10, 8, rng);
    Tensor v = Tensor::constant({5, 8}, std::vector<double>(40, 1.0));
    Tensor t = Tensor::constant({6, 8}, std::vector<double>(48, 2.0));
    Tensor fused = bb.fuse(v, t);
    REQUIRE(fused.shape() == std::vector<std::size_t>{11, 8});

    zero_out(bb.image_embed.type_vec);
    zero_out(bb.text_embed.type_vec);
    Tensor plain = bb.fuse(v, t);
    for (std::size_t i = 0; i < 40; ++i) CHECK(plain.values()[i] == 1.0);
    for (std::size_t i = 40; i < 88; ++i) CHECK(plain.values()[i] == 2.0);

    Tensor narrow = Tensor::constant({2, 4}, std::vector<double>(8, 0.0));
    CHECK_THROWS_AS(bb.fuse(narrow, t), std::invalid_argument);
}

TEST_CASE("swapping distinct modality type vectors changes the fusion") {
    Rng rng(11);
    Backbone bb(BackboneConfig{1, 8, 2, 2, 2}, 4, 4, 1, 10, 8, rng);
    Tensor v = Tensor::constant({2, 8}, std::vector<double>(16, 0.0));
    Tensor t = Tensor::constant({2, 8}, std::vector<double>(16, 0.0));
    Tensor before = bb.fuse(v, t);
    std::swap(bb.image_embed.type_vec, bb.text_embed.type_vec);
    Tensor after = bb.fuse(v, t);
    CHECK(before.values() != after.values());
}

TEST_CASE("encode with zero depth is the identity") {
    Rng rng(12);
    Backbone bb(BackboneConfig{0, 8, 2, 2, 2}, 4, 4, 1, 10, 8, rng);
    Tensor s0 = Tensor::constant({3, 8}, random_vector(24, rng));
    CHECK(bb.encode(s0).values() == s0.values());
}

TEST_CASE("encode preserves shape and attention rows sum to one") {
    Rng rng(13);
    BackboneConfig cfg{2, 32, 2, 4, 4};
    Backbone bb(cfg, 16, 16, 1, 20, 12, rng);
    Image img = random_image(16, 16, rng);
    std::vector<std::size_t> tokens = {3, 1, 4, 1, 5, 9, 2, 6};
    std::vector<Tensor> trace;
    Tensor sd = bb.represent(img, tokens, &trace);
    // 16 patches + class + 8 tokens + class
    REQUIRE(sd.shape() == std::vector<std::size_t>{26, 32});
    REQUIRE(trace.size() == cfg.depth * cfg.heads);
    for (const auto& attn : trace) {
        for (std::size_t r = 0; r < attn.dim(0); ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < attn.dim(1); ++c) sum += attn.values()[r * attn.dim(1) + c];
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("identical inputs produce identical encodings") {
    Rng rng(14);
    Backbone bb(BackboneConfig{2, 16, 2, 2, 2}, 4, 4, 1, 10, 8, rng);
    Image img = random_image(4, 4, rng);
    std::vector<std::size_t> tokens = {1, 2, 3};
    CHECK(bb.represent(img, tokens).values() == bb.represent(img, tokens).values());
}

TEST_CASE("backbone gradients match finite differences at desk dimensions") {
    Rng rng(15);
    Backbone bb(BackboneConfig{2, 32, 2, 4, 4}, 16, 16, 1, 20, 12, rng);
    ParameterStore store;
    bb.register_params(store);
    Image img = random_image(16, 16, rng);
    std::vector<std::size_t> tokens = {3, 7, 11, 0, 19};
    auto builder = [&]() { return sum_all(bb.represent(img, tokens)); };
    Rng coord_rng(16);
    auto r = fd_check_store(store, builder, 6, coord_rng);
    INFO("worst " << r.worst_param << "[" << r.worst_index << "] rel err " << r.worst_rel_err);
    CHECK(r.worst_rel_err < 1e-3);
}
