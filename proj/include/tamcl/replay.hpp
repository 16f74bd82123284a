#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <vector>

#include "tamcl/dataset.hpp"
#include "tamcl/errors.hpp"
#include "tamcl/rng.hpp"
#include "tamcl/serialize.hpp"

namespace tamcl {

struct ReplayConfig {
    double sample_pct = 0.01;
    std::size_t replay_freq = 100;
    // When set, the step counter is treated as 0-indexed and the first replay
    // of every epoch fires on the first step instead of on step replay_freq.
    bool replay_at_step_zero = false;
};

struct ReplayBatch {
    std::size_t task = 0;
    std::vector<Sample> samples;
};

// Holds verbatim copies of a small fixed fraction of each finished task's
// training records and serves random previous-task batches.
class MemoryBuffer {
public:
    struct StoreInfo {
        bool dual = false;
        std::size_t image_len = 0;
    };

    MemoryBuffer() = default;
    MemoryBuffer(const ReplayConfig& config, std::uint64_t seed)
        : config_(config), rng_(derive_seed(seed, "replay")) {
        if (config_.replay_freq < 1)
            throw std::invalid_argument("replay: replay_freq must be at least 1");
        if (config_.sample_pct <= 0.0 || config_.sample_pct > 1.0)
            throw std::invalid_argument("replay: sample_pct must be in (0, 1]");
    }

    const ReplayConfig& config() const { return config_; }
    bool empty() const { return stores_.empty(); }
    std::size_t task_count() const { return stores_.size(); }
    bool has_task(std::size_t task) const { return stores_.count(task) > 0; }
    const std::vector<Sample>& store(std::size_t task) const {
        auto it = stores_.find(task);
        if (it == stores_.end())
            throw invalid_state("replay: no store for task " + std::to_string(task));
        return it->second;
    }
    const std::map<std::size_t, StoreInfo>& infos() const { return infos_; }

    // Keeps max(1, floor(sample_pct * N)) samples chosen uniformly without
    // replacement.
    void store_task_samples(std::size_t task, const Dataset& dataset) {
        if (stores_.count(task))
            throw invalid_state("replay: task " + std::to_string(task) + " already stored");
        if (dataset.samples.empty())
            throw std::invalid_argument("replay: cannot store an empty dataset");
        std::size_t n = dataset.samples.size();
        std::size_t keep =
            static_cast<std::size_t>(std::floor(config_.sample_pct * static_cast<double>(n)));
        if (keep < 1) keep = 1;
        auto indices = rng_.sample_without_replacement(n, keep);
        std::vector<Sample> picked;
        picked.reserve(keep);
        for (std::size_t i : indices) picked.push_back(dataset.samples[i]);
        restore_store(task, dataset.spec.dual, std::move(picked));
    }

    // Direct store insertion; the buffer codec uses it when reloading.
    void restore_store(std::size_t task, bool dual, std::vector<Sample> samples) {
        if (stores_.count(task))
            throw invalid_state("replay: task " + std::to_string(task) + " already stored");
        std::size_t image_len = samples.empty() ? 0 : samples.front().image.size();
        stores_.emplace(task, std::move(samples));
        infos_[task] = StoreInfo{dual, image_len};
    }

    // step is 1-indexed within an epoch.
    bool should_replay(std::size_t step) const {
        if (config_.replay_at_step_zero) return (step - 1) % config_.replay_freq == 0;
        return step % config_.replay_freq == 0;
    }

    // Uniform task pick, then batch_size draws with replacement from that
    // task's store (stores are usually smaller than a batch).
    std::optional<ReplayBatch> get_batch(std::size_t batch_size) {
        if (stores_.empty()) return std::nullopt;
        if (batch_size < 1) throw std::invalid_argument("replay: batch_size must be at least 1");
        std::size_t pick = static_cast<std::size_t>(rng_.uniform_int(stores_.size()));
        auto it = stores_.begin();
        std::advance(it, static_cast<std::ptrdiff_t>(pick));
        ReplayBatch batch;
        batch.task = it->first;
        batch.samples.reserve(batch_size);
        for (std::size_t i = 0; i < batch_size; ++i) {
            std::size_t j = static_cast<std::size_t>(rng_.uniform_int(it->second.size()));
            batch.samples.push_back(it->second[j]);
        }
        return batch;
    }

private:
    ReplayConfig config_;
    Rng rng_;
    std::map<std::size_t, std::vector<Sample>> stores_;
    std::map<std::size_t, StoreInfo> infos_;
};

namespace replay_detail {
constexpr char kBufferMagic[4] = {'T', 'C', 'R', 'B'};
}

// Stores use the same per-record layout as dataset files. The draw stream is
// not part of the file; a reloaded buffer draws from the seed it is
// constructed with.
inline void save_buffer(const MemoryBuffer& buffer, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    BinaryWriter w(out);
    w.bytes(replay_detail::kBufferMagic, 4);
    w.u32(kDatasetFormatVersion);
    w.u64(buffer.task_count());
    for (const auto& [task, info] : buffer.infos()) {
        const auto& samples = buffer.store(task);
        w.u64(task);
        w.u8(info.dual ? 1 : 0);
        w.u64(info.image_len);
        w.u64(samples.size());
        for (const auto& s : samples) {
            w.f64_array(s.image);
            if (info.dual) w.f64_array(s.image_b);
            w.u32(static_cast<std::uint32_t>(s.tokens.size()));
            for (std::size_t t : s.tokens) w.u32(static_cast<std::uint32_t>(t));
            w.u32(static_cast<std::uint32_t>(s.label));
        }
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline MemoryBuffer load_buffer(const std::filesystem::path& path, const ReplayConfig& config,
                                std::uint64_t seed) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
    BinaryReader r(in);
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != std::string(replay_detail::kBufferMagic, 4))
        throw format_error("bad magic: expected TCRB", 0);
    std::uint32_t version = r.u32();
    if (version != kDatasetFormatVersion)
        throw format_error("unsupported buffer format version " + std::to_string(version), 4);
    MemoryBuffer buffer(config, seed);
    std::size_t tasks = r.u64();
    for (std::size_t t = 0; t < tasks; ++t) {
        std::size_t task = r.u64();
        bool dual = r.u8() != 0;
        std::size_t image_len = r.u64();
        std::size_t count = r.u64();
        std::vector<Sample> samples;
        samples.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            Sample s;
            s.image = r.f64_array(image_len);
            if (dual) s.image_b = r.f64_array(image_len);
            std::size_t token_count = r.u32();
            s.tokens.reserve(token_count);
            for (std::size_t k = 0; k < token_count; ++k) s.tokens.push_back(r.u32());
            s.label = r.u32();
            samples.push_back(std::move(s));
        }
        buffer.restore_store(task, dual, std::move(samples));
    }
    return buffer;
}

}  // namespace tamcl
