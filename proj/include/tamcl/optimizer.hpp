#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "tamcl/errors.hpp"
#include "tamcl/parameter.hpp"

namespace tamcl {

struct AdamWConfig {
    double learning_rate = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// AdamW with decoupled weight decay. Moment state is keyed by parameter
// name, so parameters added mid-stream (new task tokens, grown heads)
// start from fresh state while existing ones keep theirs. Frozen
// parameters are skipped entirely: no update, no decay, no step count.
class AdamW {
public:
    explicit AdamW(AdamWConfig config = {}) : config_(config) {}

    const AdamWConfig& config() const { return config_; }

    void step(ParameterStore& params) {
        for (auto* p : params.trainable()) {
            Tensor& t = p->tensor;
            if (t.grad().size() != t.numel())
                throw invalid_state("missing gradient for parameter: " + p->name);
            State& s = state_[p->name];
            if (s.m.size() != t.numel()) {
                s.m.assign(t.numel(), 0.0);
                s.v.assign(t.numel(), 0.0);
                s.t = 0;
            }
            s.t += 1;
            double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(s.t));
            double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(s.t));
            auto& theta = t.mutable_values();
            const auto& g = t.grad();
            for (std::size_t i = 0; i < theta.size(); ++i) {
                s.m[i] = config_.beta1 * s.m[i] + (1.0 - config_.beta1) * g[i];
                s.v[i] = config_.beta2 * s.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
                double mhat = s.m[i] / bc1;
                double vhat = s.v[i] / bc2;
                theta[i] -= config_.learning_rate *
                            (mhat / (std::sqrt(vhat) + config_.eps) + config_.weight_decay * theta[i]);
            }
        }
    }

    bool has_state(const std::string& name) const { return state_.count(name) != 0; }
    std::size_t step_count(const std::string& name) const {
        auto it = state_.find(name);
        return it == state_.end() ? 0 : it->second.t;
    }
    void reset() { state_.clear(); }

private:
    struct State {
        std::vector<double> m;
        std::vector<double> v;
        std::size_t t = 0;
    };
    AdamWConfig config_;
    std::map<std::string, State> state_;
};

}  // namespace tamcl
