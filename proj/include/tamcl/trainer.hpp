#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tamcl/dataset.hpp"
#include "tamcl/log.hpp"
#include "tamcl/losses.hpp"
#include "tamcl/metrics.hpp"
#include "tamcl/model.hpp"
#include "tamcl/optimizer.hpp"
#include "tamcl/replay.hpp"
#include "tamcl/rng.hpp"

namespace tamcl {

// Which pieces of the full pipeline a run uses. The four named methods and
// the ablations all run through the same step code, differing only here.
struct MethodFlags {
    bool use_tab = true;
    bool use_kd = true;
    bool use_div = true;
    bool use_replay = true;
    bool use_ewc = false;
    // Eq-style weighting of the three terms; off for the baselines, which
    // optimize plain cross-entropy (plus the quadratic penalty for ewc).
    bool use_weighting = true;
};

inline MethodFlags flags_for_method(const std::string& method) {
    MethodFlags f;
    if (method == "tamcl") {
        return f;
    }
    f.use_tab = false;
    f.use_kd = false;
    f.use_div = false;
    f.use_replay = false;
    f.use_weighting = false;
    if (method == "finetune") return f;
    if (method == "er") {
        f.use_replay = true;
        return f;
    }
    if (method == "ewc") {
        f.use_ewc = true;
        return f;
    }
    throw std::invalid_argument("unknown method: " + method +
                                " (expected tamcl, finetune, ewc, or er)");
}

struct TrainConfig {
    std::string method = "tamcl";
    std::size_t epochs = 5;
    std::size_t batch_size = 8;
    AdamWConfig optimizer;
    double alpha = 5000.0;
    std::vector<double> alpha_per_task;  // overrides alpha by task index when set
    ReplayConfig replay;
    double ewc_weight = 0.1;
    double fisher_fraction = 0.4;
    double div_sign = 1.0;
    bool kd_per_position = true;
    std::uint64_t seed = 0;
    // Ablation switches applied on top of the method's flag set.
    bool disable_kd = false;
    bool disable_tab = false;
    bool disable_replay = false;

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("train config: epochs must be at least 1");
        if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be at least 1");
        if (fisher_fraction <= 0.0 || fisher_fraction > 1.0)
            throw std::invalid_argument("train config: fisher_fraction must be in (0, 1]");
        flags_for_method(method);
    }

    MethodFlags flags() const {
        MethodFlags f = flags_for_method(method);
        if (disable_kd) f.use_kd = false;
        if (disable_tab) f.use_tab = false;
        if (disable_replay) f.use_replay = false;
        return f;
    }

    double alpha_for(std::size_t task) const {
        if (task < alpha_per_task.size()) return alpha_per_task[task];
        return alpha;
    }
};

// Scalar record of one optimization step, kept for curves and audits.
struct LossRecord {
    double c = 0.0, ikd = 0.0, div = 0.0, total = 0.0;
    double lambda = 0.0, alpha = 0.0, beta = 0.0;
    bool replay = false;
};

// Diagonal curvature estimate with the parameter values it anchors to.
struct FisherState {
    std::map<std::string, std::vector<double>> fisher;
    std::map<std::string, std::vector<double>> anchor;
};

struct PlannedTask {
    std::string name;
    Dataset train;
    Dataset test;
};

struct SequenceResult {
    AccuracyMatrix matrix;
    ForgettingReport forgetting;
    std::vector<std::vector<LossRecord>> curves;  // one curve per task
    std::vector<std::string> task_names;
    std::vector<std::size_t> label_counts;
};

class Trainer {
public:
    Trainer(const ModelConfig& model_config, const TrainConfig& config)
        : config_(config),
          flags_(config.flags()),
          model_(with_tab(model_config, config), config.seed),
          optimizer_(config.optimizer),
          buffer_(config.replay, config.seed),
          rng_(derive_seed(config.seed, "trainer")) {
        config_.validate();
    }

    TamClModel& model() { return model_; }
    const TamClModel& model() const { return model_; }
    MemoryBuffer& buffer() { return buffer_; }
    const MethodFlags& flags() const { return flags_; }
    const std::optional<TeacherSnapshot>& teacher() const { return teacher_; }

    void begin_task(const std::string& name, std::size_t label_count, bool dual) {
        teacher_ = model_.begin_task(name, label_count, dual);
        if (!flags_.use_kd) teacher_.reset();
    }

    void finish_task() { model_.finish_task(); }

    // One optimizer update on one batch. Replay steps pass the replayed
    // task's id, so the forward pass runs through that task's token and head
    // while updates land only on currently-trainable parameters.
    LossBreakdown train_step(const std::vector<Sample>& batch, std::size_t task) {
        if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
        const TaskEntry& entry = model_.task_entry(task);
        for (const auto& s : batch)
            if (s.label >= entry.label_count)
                throw std::invalid_argument("train_step: label outside task " +
                                            std::to_string(task) + " label space");
        model_.params().zero_grad();

        std::vector<Tensor> ce_terms, kd_terms;
        ce_terms.reserve(batch.size());
        for (const auto& sample : batch) {
            ForwardResult fwd = model_.forward(sample, task);
            ce_terms.push_back(
                cross_entropy_logits(fwd.logits, model_.head(task).global_label(sample.label)));
            if (teacher_) {
                std::vector<double> ref = teacher_->represent(sample, entry.dual);
                kd_terms.push_back(ikd_loss(fwd.rep, ref, config_.kd_per_position));
            }
        }
        Tensor l_c = mean_of(ce_terms);
        Tensor l_ikd = kd_terms.empty() ? Tensor::scalar_constant(0.0) : mean_of(kd_terms);
        Tensor l_div = diversity_term();

        LossBreakdown breakdown;
        if (flags_.use_weighting) {
            breakdown = total_loss(l_c, l_ikd, l_div, model_.task_count(),
                                   config_.alpha_for(model_.current_task()), config_.div_sign);
        } else {
            Tensor graph = l_c;
            if (flags_.use_ewc && !fisher_states_.empty())
                graph = add(graph, scale(ewc_penalty(), config_.ewc_weight));
            breakdown.c = l_c.value();
            breakdown.graph = graph;
            breakdown.total = graph.value();
        }
        backward(breakdown.graph);
        optimizer_.step(model_.params());
        return breakdown;
    }

    // One task's full pass: epochs of shuffled batches with replay batches
    // interleaved at the buffer's cadence. Records every step, replay steps
    // included, in order.
    std::vector<LossRecord> train_task(const Dataset& train) {
        std::size_t current = model_.current_task();
        std::vector<LossRecord> curve;
        Rng epoch_rng(derive_seed(config_.seed, "epochs:task" + std::to_string(current)));
        for (std::size_t epoch = 0; epoch < config_.epochs; ++epoch) {
            auto plan = batches(train.samples.size(), config_.batch_size, epoch_rng);
            std::size_t step = 0;
            for (const auto& index_batch : plan) {
                ++step;
                std::vector<Sample> batch;
                batch.reserve(index_batch.size());
                for (std::size_t i : index_batch) batch.push_back(train.samples[i]);
                curve.push_back(record(train_step(batch, current), false));
                if (flags_.use_replay && buffer_.should_replay(step)) {
                    auto replay = buffer_.get_batch(config_.batch_size);
                    if (replay)
                        curve.push_back(record(train_step(replay->samples, replay->task), true));
                }
            }
            log_debug("task " + std::to_string(current) + " epoch " + std::to_string(epoch + 1) +
                      "/" + std::to_string(config_.epochs) + " loss " +
                      std::to_string(curve.back().total));
        }
        return curve;
    }

    // F_k = mean over a sampled fraction of the dataset of the squared
    // cross-entropy gradient; anchors at the current parameter values.
    FisherState fisher_estimate(const Dataset& dataset, std::size_t task) {
        if (dataset.samples.empty())
            throw std::invalid_argument("fisher_estimate: empty dataset");
        std::size_t count = static_cast<std::size_t>(
            std::floor(config_.fisher_fraction * static_cast<double>(dataset.samples.size())));
        if (count < 1) count = 1;
        Rng fisher_rng(derive_seed(config_.seed, "fisher:task" + std::to_string(task)));
        auto picks = fisher_rng.sample_without_replacement(dataset.samples.size(), count);

        FisherState state;
        for (const auto* p : model_.params().trainable()) {
            state.fisher[p->name] = std::vector<double>(p->tensor.numel(), 0.0);
            state.anchor[p->name] = p->tensor.values();
        }
        for (std::size_t i : picks) {
            model_.params().zero_grad();
            const Sample& sample = dataset.samples[i];
            ForwardResult fwd = model_.forward(sample, task);
            Tensor loss =
                cross_entropy_logits(fwd.logits, model_.head(task).global_label(sample.label));
            backward(loss);
            for (const auto* p : model_.params().trainable()) {
                auto& acc = state.fisher[p->name];
                const auto& g = p->tensor.grad();
                for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += g[k] * g[k];
            }
        }
        double inv = 1.0 / static_cast<double>(count);
        for (auto& [name, f] : state.fisher)
            for (double& v : f) v *= inv;
        return state;
    }

    void push_fisher(FisherState state) { fisher_states_.push_back(std::move(state)); }
    const std::vector<FisherState>& fisher_states() const { return fisher_states_; }

    // Sum over consolidated tasks of sum_k F_k (theta_k - anchor_k)^2,
    // restricted to parameters that are trainable now.
    Tensor ewc_penalty() {
        if (fisher_states_.empty()) throw invalid_state("ewc_penalty: no consolidated tasks");
        std::vector<Tensor> terms;
        for (const auto& state : fisher_states_) {
            for (auto* p : model_.params().trainable()) {
                auto it = state.fisher.find(p->name);
                if (it == state.fisher.end()) continue;
                if (it->second.size() != p->tensor.numel())
                    throw invalid_state("ewc_penalty: shape mismatch for " + p->name);
                terms.push_back(quad_penalty(p->tensor, it->second, state.anchor.at(p->name)));
            }
        }
        if (terms.empty()) return Tensor::scalar_constant(0.0);
        Tensor total = terms[0];
        for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
        return total;
    }

    double evaluate(const Dataset& test, std::size_t task) const {
        if (test.samples.empty()) throw std::invalid_argument("evaluate: empty test set");
        std::vector<std::size_t> predictions, labels;
        predictions.reserve(test.samples.size());
        labels.reserve(test.samples.size());
        for (const auto& s : test.samples) {
            predictions.push_back(model_.predict(s, task));
            labels.push_back(s.label);
        }
        return accuracy(predictions, labels);
    }

private:
    static ModelConfig with_tab(ModelConfig cfg, const TrainConfig& config) {
        cfg.use_tab = config.flags().use_tab;
        return cfg;
    }

    Tensor diversity_term() {
        if (!flags_.use_div || !flags_.use_tab) return Tensor::scalar_constant(0.0);
        std::size_t current = model_.current_task();
        if (current == 0) return Tensor::scalar_constant(0.0);
        std::vector<std::vector<double>> previous;
        previous.reserve(current);
        for (std::size_t j = 0; j < current; ++j)
            previous.push_back(model_.token(j).value.values());
        return div_loss(model_.token(current).value, previous);
    }

    static LossRecord record(const LossBreakdown& b, bool replay) {
        return LossRecord{b.c, b.ikd, b.div, b.total, b.lambda, b.alpha, b.beta, replay};
    }

    TrainConfig config_;
    MethodFlags flags_;
    TamClModel model_;
    AdamW optimizer_;
    MemoryBuffer buffer_;
    Rng rng_;
    std::optional<TeacherSnapshot> teacher_;
    std::vector<FisherState> fisher_states_;
};

// Full continual-learning run: train each task in order, storing replay
// samples and consolidation state as configured, and evaluate on every task
// seen so far after each one.
inline SequenceResult run_sequence(const ModelConfig& model_config, const TrainConfig& config,
                                   const std::vector<PlannedTask>& plan) {
    if (plan.empty()) throw std::invalid_argument("run_sequence: empty task plan");
    Trainer trainer(model_config, config);
    SequenceResult result;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        const PlannedTask& task = plan[i];
        result.task_names.push_back(task.name);
        result.label_counts.push_back(task.train.spec.label_count);
        trainer.begin_task(task.name, task.train.spec.label_count, task.train.spec.dual);
        result.curves.push_back(trainer.train_task(task.train));
        trainer.finish_task();
        if (trainer.flags().use_replay) trainer.buffer().store_task_samples(i, task.train);
        if (trainer.flags().use_ewc) trainer.push_fisher(trainer.fisher_estimate(task.train, i));
        std::vector<double> row;
        row.reserve(i + 1);
        for (std::size_t j = 0; j <= i; ++j) row.push_back(trainer.evaluate(plan[j].test, j));
        result.matrix.add_row(std::move(row));
        log_info("task " + std::to_string(i) + " (" + task.name + ") done; just-trained accuracy " +
                 std::to_string(result.matrix.just_trained(i)));
    }
    result.forgetting =
        build_forgetting_report(result.matrix, result.label_counts, result.task_names);
    return result;
}

}  // namespace tamcl
