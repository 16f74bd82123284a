#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tamcl/backbone.hpp"
#include "tamcl/dataset.hpp"
#include "tamcl/errors.hpp"
#include "tamcl/parameter.hpp"
#include "tamcl/rng.hpp"
#include "tamcl/serialize.hpp"
#include "tamcl/task_attention.hpp"
#include "tamcl/version.hpp"

namespace tamcl {

struct ModelConfig {
    BackboneConfig backbone;
    std::size_t img_h = 16, img_w = 16, img_c = 1;
    std::size_t vocab = 32;
    std::size_t max_text_len = 16;
    // With the task-attention path off the model degrades to the baseline
    // architecture: pooled class-token features into per-task heads with
    // independent (non-accumulating) label spaces, no tokens.
    bool use_tab = true;

    void validate() const {
        backbone.validate();
        if (img_h % backbone.patch != 0 || img_w % backbone.patch != 0)
            throw std::invalid_argument("model config: image dimensions must be divisible by the patch size");
        if (vocab == 0) throw std::invalid_argument("model config: vocab must be positive");
        if (max_text_len == 0) throw std::invalid_argument("model config: max_text_len must be positive");
    }
};

struct TaskEntry {
    std::string name;
    std::size_t label_count = 0;
    bool dual = false;
};

struct ForwardResult {
    Tensor logits;
    // Pre-classifier sequence representation: the full fused sequence for
    // single-image tasks, the compressed 1 x G row for dual-image tasks.
    Tensor rep;
    std::size_t task = 0;
};

class TamClModel;

// Frozen full-parameter copy of the model taken when a task begins. Only the
// backbone is ever evaluated on it.
struct TeacherSnapshot {
    std::shared_ptr<const TamClModel> model;

    std::vector<double> represent(const Sample& sample, bool dual) const;
};

class TamClModel {
public:
    TamClModel(const ModelConfig& config, std::uint64_t seed)
        : config_(config), init_rng_(derive_seed(seed, "model:init")) {
        config_.validate();
        backbone_ = Backbone(config_.backbone, config_.img_h, config_.img_w, config_.img_c,
                             config_.vocab, config_.max_text_len, init_rng_);
        backbone_.register_params(store_);
        if (config_.use_tab) {
            tab_ = TaskAttentionBlock(config_.backbone.hidden, config_.backbone.heads,
                                      config_.backbone.mlp_factor, init_rng_);
            tab_.register_params(store_);
        }
    }

    const ModelConfig& config() const { return config_; }
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }
    const std::vector<TaskEntry>& tasks() const { return tasks_; }
    std::size_t task_count() const { return tasks_.size(); }
    bool mid_task() const { return mid_task_; }
    std::size_t current_task() const {
        if (!mid_task_) throw invalid_state("no task is active");
        return tasks_.size() - 1;
    }
    const TaskAttentionBlock& tab() const { return tab_; }
    const Backbone& backbone() const { return backbone_; }
    const std::vector<TaskToken>& task_tokens() const { return tokens_; }
    const std::vector<ClassifierHead>& heads() const { return heads_; }

    // Registers the next task (token + head, or bare head without the
    // task-attention path) and rebuilds the freeze mask. The teacher copy is
    // taken before the expansion, so it knows nothing of the new task.
    std::optional<TeacherSnapshot> begin_task(const std::string& name, std::size_t label_count,
                                              bool dual) {
        if (mid_task_) throw invalid_state("begin_task: previous task still active");
        std::optional<TeacherSnapshot> teacher;
        if (!tasks_.empty()) teacher = TeacherSnapshot{clone_frozen()};
        std::size_t index = tasks_.size();
        tasks_.push_back(TaskEntry{name, label_count, dual});
        std::string prefix = "task" + std::to_string(index);
        if (config_.use_tab) {
            tokens_.emplace_back(index, config_.backbone.hidden, init_rng_);
            tokens_.back().register_params(store_, prefix);
        }
        std::size_t offset = 0;
        if (config_.use_tab && !heads_.empty()) offset = heads_.back().total_dim;
        heads_.emplace_back(index, config_.backbone.hidden, label_count, offset, init_rng_);
        heads_.back().register_params(store_, prefix);
        rebuild_freeze_mask(index);
        mid_task_ = true;
        return teacher;
    }

    void finish_task() {
        if (!mid_task_) throw invalid_state("finish_task: no task is active");
        mid_task_ = false;
    }

    ForwardResult forward(const Sample& sample, std::size_t task,
                          std::vector<Tensor>* attn_trace = nullptr) const {
        const TaskEntry& entry = task_entry(task);
        const ClassifierHead& head = heads_[task];
        Tensor rep, features;
        if (entry.dual) {
            if (sample.image_b.empty())
                throw invalid_state("forward: dual-image task requires a second image");
            Tensor branch_a = backbone_.represent(sample_img(sample.image), sample.tokens);
            Tensor branch_b = backbone_.represent(sample_img(sample.image_b), sample.tokens);
            Tensor fused = fuse_dual_representations(take_row(branch_a, 0), take_row(branch_b, 0));
            rep = reshape(fused, {1, config_.backbone.hidden});
            features = config_.use_tab ? tab_.forward(tokens_[task].value, rep, attn_trace) : fused;
        } else {
            if (!sample.image_b.empty())
                throw invalid_state("forward: single-image task received a second image");
            rep = backbone_.represent(sample_img(sample.image), sample.tokens);
            features = config_.use_tab ? tab_.forward(tokens_[task].value, rep, attn_trace)
                                       : take_row(rep, 0);
        }
        return ForwardResult{head.logits(features), rep, task};
    }

    std::size_t predict(const Sample& sample, std::size_t task) const {
        ForwardResult r = forward(sample, task);
        return heads_[task].predict(r.logits);
    }

    // Backbone-only pipeline, shaped exactly like ForwardResult::rep.
    Tensor backbone_rep(const Sample& sample, bool dual) const {
        if (dual) {
            if (sample.image_b.empty())
                throw invalid_state("backbone_rep: dual-image task requires a second image");
            Tensor branch_a = backbone_.represent(sample_img(sample.image), sample.tokens);
            Tensor branch_b = backbone_.represent(sample_img(sample.image_b), sample.tokens);
            return reshape(fuse_dual_representations(take_row(branch_a, 0), take_row(branch_b, 0)),
                           {1, config_.backbone.hidden});
        }
        return backbone_.represent(sample_img(sample.image), sample.tokens);
    }

    const TaskEntry& task_entry(std::size_t task) const {
        if (task >= tasks_.size())
            throw std::invalid_argument("unknown task index " + std::to_string(task));
        return tasks_[task];
    }
    const ClassifierHead& head(std::size_t task) const {
        task_entry(task);
        return heads_[task];
    }
    const TaskToken& token(std::size_t task) const {
        task_entry(task);
        if (!config_.use_tab) throw invalid_state("model has no task tokens");
        return tokens_[task];
    }

    // Deep copy with every parameter frozen; used as the distillation teacher.
    std::shared_ptr<const TamClModel> clone_frozen() const {
        auto copy = std::make_shared<TamClModel>(config_, 0);
        for (const auto& entry : tasks_) copy->append_task_structure(entry);
        auto& src = store_.all();
        auto& dst = copy->store_.all();
        for (std::size_t i = 0; i < src.size(); ++i) {
            dst[i].tensor.mutable_values() = src[i].tensor.values();
            dst[i].set_trainable(false);
        }
        return copy;
    }

    friend void save_checkpoint(const TamClModel& model, const std::filesystem::path& path);
    friend TamClModel load_checkpoint(const std::filesystem::path& path);

private:
    Image sample_img(const std::vector<double>& values) const {
        if (values.size() != config_.img_h * config_.img_w * config_.img_c)
            throw std::invalid_argument("forward: image size does not match the model configuration");
        return Image{config_.img_h, config_.img_w, config_.img_c, values};
    }

    // Structural expansion without snapshotting or unfreezing; used when
    // rebuilding a model from a checkpoint or cloning a teacher.
    void append_task_structure(const TaskEntry& entry) {
        std::size_t index = tasks_.size();
        tasks_.push_back(entry);
        std::string prefix = "task" + std::to_string(index);
        if (config_.use_tab) {
            tokens_.emplace_back(index, config_.backbone.hidden, init_rng_);
            tokens_.back().register_params(store_, prefix);
        }
        std::size_t offset = 0;
        if (config_.use_tab && heads_.size() > 0) offset = heads_.back().total_dim;
        heads_.emplace_back(index, config_.backbone.hidden, entry.label_count, offset, init_rng_);
        heads_.back().register_params(store_, prefix);
    }

    void rebuild_freeze_mask(std::size_t current) {
        for (auto& p : store_.all()) p.set_trainable(true);
        for (std::size_t j = 0; j < tasks_.size(); ++j) {
            if (j == current) continue;
            std::string prefix = "task" + std::to_string(j);
            if (config_.use_tab) store_.get(prefix + ".token").set_trainable(false);
            store_.get(prefix + ".head.weight").set_trainable(false);
            store_.get(prefix + ".head.bias").set_trainable(false);
        }
    }

    ModelConfig config_;
    Rng init_rng_;
    Backbone backbone_;
    TaskAttentionBlock tab_;
    std::vector<TaskToken> tokens_;
    std::vector<ClassifierHead> heads_;
    std::vector<TaskEntry> tasks_;
    ParameterStore store_;
    bool mid_task_ = false;
};

inline std::vector<double> TeacherSnapshot::represent(const Sample& sample, bool dual) const {
    if (!model) throw invalid_state("teacher snapshot is empty");
    return model->backbone_rep(sample, dual).values();
}

namespace checkpoint_detail {
constexpr char kMagic[4] = {'T', 'C', 'C', 'K'};
}

inline void save_checkpoint(const TamClModel& model, const std::filesystem::path& path) {
    nlohmann::json manifest;
    manifest["format"] = "tamcl-checkpoint";
    manifest["model"] = {{"depth", model.config_.backbone.depth},
                         {"hidden", model.config_.backbone.hidden},
                         {"heads", model.config_.backbone.heads},
                         {"mlp_factor", model.config_.backbone.mlp_factor},
                         {"patch", model.config_.backbone.patch},
                         {"img_h", model.config_.img_h},
                         {"img_w", model.config_.img_w},
                         {"img_c", model.config_.img_c},
                         {"vocab", model.config_.vocab},
                         {"max_text_len", model.config_.max_text_len},
                         {"use_tab", model.config_.use_tab}};
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& t : model.tasks_)
        tasks.push_back({{"name", t.name}, {"label_count", t.label_count}, {"dual", t.dual}});
    manifest["tasks"] = tasks;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    BinaryWriter w(out);
    w.bytes(checkpoint_detail::kMagic, 4);
    w.u32(kCheckpointFormatVersion);
    w.str(manifest.dump());
    w.u64(model.store_.size());
    for (const auto& p : model.store_.all()) {
        w.str(p.name);
        w.u64(p.tensor.rank());
        for (std::size_t d : p.tensor.shape()) w.u64(d);
        w.f64_array(p.tensor.values());
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline TamClModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
    BinaryReader r(in);
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != std::string(checkpoint_detail::kMagic, 4))
        throw format_error("bad magic: expected TCCK", 0);
    std::uint32_t version = r.u32();
    if (version != kCheckpointFormatVersion)
        throw format_error("unsupported checkpoint format version " + std::to_string(version) +
                               ", expected " + std::to_string(kCheckpointFormatVersion),
                           4);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(r.str());
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("checkpoint manifest is not valid JSON: ") + e.what(), 8);
    }
    ModelConfig cfg;
    const auto& m = manifest.at("model");
    cfg.backbone.depth = m.at("depth").get<std::size_t>();
    cfg.backbone.hidden = m.at("hidden").get<std::size_t>();
    cfg.backbone.heads = m.at("heads").get<std::size_t>();
    cfg.backbone.mlp_factor = m.at("mlp_factor").get<std::size_t>();
    cfg.backbone.patch = m.at("patch").get<std::size_t>();
    cfg.img_h = m.at("img_h").get<std::size_t>();
    cfg.img_w = m.at("img_w").get<std::size_t>();
    cfg.img_c = m.at("img_c").get<std::size_t>();
    cfg.vocab = m.at("vocab").get<std::size_t>();
    cfg.max_text_len = m.at("max_text_len").get<std::size_t>();
    cfg.use_tab = m.at("use_tab").get<bool>();

    TamClModel model(cfg, 0);
    for (const auto& t : manifest.at("tasks"))
        model.append_task_structure(TaskEntry{t.at("name").get<std::string>(),
                                              t.at("label_count").get<std::size_t>(),
                                              t.at("dual").get<bool>()});
    for (auto& p : model.store_.all()) p.set_trainable(false);

    std::size_t count = r.u64();
    if (count != model.store_.size())
        throw format_error("checkpoint parameter count " + std::to_string(count) +
                               " does not match the manifest structure",
                           r.offset());
    for (std::size_t i = 0; i < count; ++i) {
        std::string name = r.str();
        if (!model.store_.contains(name))
            throw format_error("unknown parameter in checkpoint: " + name, r.offset());
        Parameter& p = model.store_.get(name);
        std::size_t rank = r.u64();
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = r.u64();
        if (shape != p.tensor.shape())
            throw format_error("parameter shape mismatch for " + name, r.offset());
        p.tensor.mutable_values() = r.f64_array(p.tensor.numel());
    }
    return model;
}

}  // namespace tamcl
