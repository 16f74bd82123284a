#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "tamcl/errors.hpp"

namespace tamcl {

inline double accuracy(const std::vector<std::size_t>& predictions,
                       const std::vector<std::size_t>& labels) {
    if (predictions.empty()) throw std::invalid_argument("accuracy: empty prediction set");
    if (predictions.size() != labels.size())
        throw std::invalid_argument("accuracy: prediction and label counts differ");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

// Normalized forgetting in percent: 100 * (S_A - S_after) / (S_A - S_R),
// where S_A is the accuracy right after training the task, S_after the
// accuracy later in the sequence, and S_R the random baseline. 0 means no
// forgetting, 100 a fall to chance; values beyond that range are meaningful
// and preserved.
inline double forgetting_rate(double s_a, double s_after, double s_r) {
    if (s_a == s_r)
        throw undefined_metric("forgetting rate undefined: trained accuracy equals the random baseline");
    return 100.0 * (s_a - s_after) / (s_a - s_r);
}

inline double random_baseline(std::size_t label_count) {
    if (label_count < 1) throw std::invalid_argument("random_baseline: label_count must be positive");
    return 1.0 / static_cast<double>(label_count);
}

// Samples per label; higher means easier.
inline double difficulty_score(std::size_t pairs, std::size_t labels) {
    if (labels < 1) throw std::invalid_argument("difficulty_score: labels must be positive");
    return static_cast<double>(pairs) / static_cast<double>(labels);
}

struct TaskDifficulty {
    std::string name;
    std::size_t pairs = 0;
    std::size_t labels = 1;
    double score = 0.0;
};

inline TaskDifficulty task_difficulty(const std::string& name, std::size_t pairs,
                                      std::size_t labels) {
    return TaskDifficulty{name, pairs, labels, difficulty_score(pairs, labels)};
}

// Lower-triangular matrix: rows[i][j] = accuracy on task j's test set after
// training task i, as a fraction in [0, 1].
class AccuracyMatrix {
public:
    void add_row(std::vector<double> row) {
        if (row.size() != rows_.size() + 1)
            throw std::invalid_argument("accuracy matrix: row " + std::to_string(rows_.size()) +
                                        " must have length " + std::to_string(rows_.size() + 1));
        for (double v : row)
            if (v < 0.0 || v > 1.0)
                throw std::invalid_argument("accuracy matrix: accuracy outside [0, 1]");
        rows_.push_back(std::move(row));
    }

    std::size_t task_count() const { return rows_.size(); }
    const std::vector<std::vector<double>>& rows() const { return rows_; }

    double at(std::size_t after_task, std::size_t task) const {
        if (after_task >= rows_.size() || task > after_task)
            throw std::invalid_argument("accuracy matrix: entry (" + std::to_string(after_task) +
                                        ", " + std::to_string(task) + ") is outside the triangle");
        return rows_[after_task][task];
    }

    // Accuracy on a task immediately after training it.
    double just_trained(std::size_t task) const { return at(task, task); }

private:
    std::vector<std::vector<double>> rows_;
};

struct ForgettingEntry {
    std::size_t task = 0;        // the task being forgotten
    std::size_t after_task = 0;  // measured after training this later task
    double rate_percent = 0.0;
    // False when the trained accuracy sits exactly on the random baseline,
    // which leaves the normalization with a zero denominator.
    bool defined = true;
};

struct ForgettingReport {
    std::vector<ForgettingEntry> entries;       // all pairs task < after_task
    std::vector<double> random_baselines;       // S_R per task
    std::vector<std::string> task_names;

    const ForgettingEntry& entry(std::size_t after_task, std::size_t task) const {
        for (const auto& e : entries)
            if (e.after_task == after_task && e.task == task) return e;
        throw std::invalid_argument("forgetting report: no entry for task " + std::to_string(task) +
                                    " after task " + std::to_string(after_task));
    }

    double rate(std::size_t after_task, std::size_t task) const {
        const ForgettingEntry& e = entry(after_task, task);
        if (!e.defined)
            throw undefined_metric("forgetting rate undefined for task " + std::to_string(task) +
                                   " after task " + std::to_string(after_task));
        return e.rate_percent;
    }
};

inline ForgettingReport build_forgetting_report(const AccuracyMatrix& matrix,
                                                const std::vector<std::size_t>& label_counts,
                                                const std::vector<std::string>& task_names = {}) {
    if (label_counts.size() != matrix.task_count())
        throw std::invalid_argument("forgetting report: label counts do not match the matrix");
    ForgettingReport report;
    report.task_names = task_names;
    for (std::size_t j = 0; j < matrix.task_count(); ++j)
        report.random_baselines.push_back(random_baseline(label_counts[j]));
    for (std::size_t i = 0; i < matrix.task_count(); ++i)
        for (std::size_t j = 0; j < i; ++j) {
            ForgettingEntry e{j, i, 0.0, true};
            double s_a = matrix.just_trained(j);
            double s_r = report.random_baselines[j];
            if (s_a == s_r)
                e.defined = false;
            else
                e.rate_percent = forgetting_rate(s_a, matrix.at(i, j), s_r);
            report.entries.push_back(e);
        }
    return report;
}

}  // namespace tamcl
