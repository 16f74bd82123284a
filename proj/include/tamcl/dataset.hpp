#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tamcl/backbone.hpp"
#include "tamcl/errors.hpp"
#include "tamcl/rng.hpp"
#include "tamcl/serialize.hpp"
#include "tamcl/version.hpp"

namespace tamcl {

struct TaskSpec {
    std::string name;
    std::size_t label_count = 2;
    std::size_t img_h = 16, img_w = 16, img_c = 1;
    std::size_t vocab = 32;
    std::size_t len_min = 6, len_max = 10;
    bool dual = false;
    std::size_t train_count = 1000;
    std::size_t test_count = 300;
    std::uint64_t class_seed = 0;
    double noise = 0.25;
    bool domain_shift = false;

    void validate() const {
        if (name.empty()) throw std::invalid_argument("task spec: name must not be empty");
        if (label_count < 2) throw std::invalid_argument("task spec: label_count must be at least 2");
        if (img_h == 0 || img_w == 0 || img_c == 0)
            throw std::invalid_argument("task spec: image dimensions must be positive");
        if (vocab == 0) throw std::invalid_argument("task spec: vocab must be positive");
        if (len_min == 0 || len_min > len_max)
            throw std::invalid_argument("task spec: text length range must satisfy 0 < min <= max");
        if (train_count == 0 || test_count == 0)
            throw std::invalid_argument("task spec: split sizes must be positive");
        if (noise < 0.0) throw std::invalid_argument("task spec: noise must be non-negative");
    }
};

// One labeled bimodal record; image_b is filled only for dual-image tasks.
struct Sample {
    std::vector<double> image;
    std::vector<double> image_b;
    std::vector<std::size_t> tokens;
    std::size_t label = 0;
};

struct Dataset {
    TaskSpec spec;
    std::vector<Sample> samples;
};

inline Image sample_image(const TaskSpec& spec, const std::vector<double>& values) {
    return Image{spec.img_h, spec.img_w, spec.img_c, values};
}

namespace detail {

constexpr char kDatasetMagic[4] = {'T', 'C', 'D', 'S'};

inline void write_task_spec(BinaryWriter& w, const TaskSpec& s) {
    w.str(s.name);
    w.u64(s.label_count);
    w.u64(s.img_h);
    w.u64(s.img_w);
    w.u64(s.img_c);
    w.u64(s.vocab);
    w.u64(s.len_min);
    w.u64(s.len_max);
    w.u8(s.dual ? 1 : 0);
    w.u64(s.train_count);
    w.u64(s.test_count);
    w.u64(s.class_seed);
    w.f64(s.noise);
    w.u8(s.domain_shift ? 1 : 0);
}

inline TaskSpec read_task_spec(BinaryReader& r) {
    TaskSpec s;
    s.name = r.str();
    s.label_count = r.u64();
    s.img_h = r.u64();
    s.img_w = r.u64();
    s.img_c = r.u64();
    s.vocab = r.u64();
    s.len_min = r.u64();
    s.len_max = r.u64();
    s.dual = r.u8() != 0;
    s.train_count = r.u64();
    s.test_count = r.u64();
    s.class_seed = r.u64();
    s.noise = r.f64();
    s.domain_shift = r.u8() != 0;
    return s;
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    BinaryWriter w(out);
    w.bytes(detail::kDatasetMagic, 4);
    w.u32(kDatasetFormatVersion);
    detail::write_task_spec(w, ds.spec);
    w.u64(ds.samples.size());
    for (const auto& s : ds.samples) {
        w.f64_array(s.image);
        if (ds.spec.dual) w.f64_array(s.image_b);
        w.u32(static_cast<std::uint32_t>(s.tokens.size()));
        for (std::size_t t : s.tokens) w.u32(static_cast<std::uint32_t>(t));
        w.u32(static_cast<std::uint32_t>(s.label));
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
    BinaryReader r(in);
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != std::string(detail::kDatasetMagic, 4))
        throw format_error("bad magic: expected TCDS", 0);
    std::uint32_t version = r.u32();
    if (version != kDatasetFormatVersion)
        throw format_error("unsupported dataset format version " + std::to_string(version) +
                               ", expected " + std::to_string(kDatasetFormatVersion),
                           4);
    Dataset ds;
    ds.spec = detail::read_task_spec(r);
    ds.spec.validate();
    std::size_t pixel_count = ds.spec.img_h * ds.spec.img_w * ds.spec.img_c;
    std::size_t count = r.u64();
    ds.samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Sample s;
        s.image = r.f64_array(pixel_count);
        if (ds.spec.dual) s.image_b = r.f64_array(pixel_count);
        std::size_t token_count = r.u32();
        s.tokens.reserve(token_count);
        for (std::size_t t = 0; t < token_count; ++t) {
            std::size_t id = r.u32();
            if (id >= ds.spec.vocab)
                throw format_error("token id " + std::to_string(id) + " outside vocabulary", r.offset());
            s.tokens.push_back(id);
        }
        s.label = r.u32();
        if (s.label >= ds.spec.label_count)
            throw format_error("label " + std::to_string(s.label) + " outside label count", r.offset());
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// Shuffled index batches for one epoch; the trailing partial batch is kept.
inline std::vector<std::vector<std::size_t>> batches(std::size_t dataset_size, std::size_t batch_size,
                                                     Rng& rng) {
    if (batch_size == 0) throw std::invalid_argument("batches: batch size must be positive");
    std::vector<std::size_t> order(dataset_size);
    for (std::size_t i = 0; i < dataset_size; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < dataset_size; start += batch_size) {
        std::size_t end = std::min(dataset_size, start + batch_size);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

}  // namespace tamcl
