#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tamcl/errors.hpp"
#include "tamcl/rng.hpp"
#include "tamcl/tensor.hpp"

namespace tamcl {

// Named trainable tensor. The tensor is a graph leaf; freezing clears its
// requires_grad flag so frozen weights never enter the backward sweep.
struct Parameter {
    std::string name;
    Tensor tensor;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string name_, Tensor tensor_, bool trainable_ = true)
        : name(std::move(name_)), tensor(std::move(tensor_)), trainable(trainable_) {
        tensor.set_requires_grad(trainable);
    }

    void set_trainable(bool flag) {
        trainable = flag;
        tensor.set_requires_grad(flag);
    }
};

inline Tensor init_normal(std::vector<std::size_t> shape, Rng& rng, double stddev = 0.02) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.normal(0.0, stddev);
    return Tensor::leaf(std::move(shape), std::move(v));
}

inline Tensor init_zeros(std::vector<std::size_t> shape) {
    std::vector<double> v(shape_numel(shape), 0.0);
    return Tensor::leaf(std::move(shape), std::move(v));
}

inline Tensor init_ones(std::vector<std::size_t> shape) {
    std::vector<double> v(shape_numel(shape), 1.0);
    return Tensor::leaf(std::move(shape), std::move(v));
}

// Ordered collection of parameters. Iteration follows registration order,
// which fixes the update order and the checkpoint layout.
class ParameterStore {
public:
    Parameter& add(std::string name, Tensor tensor, bool trainable = true) {
        for (const auto& p : params_)
            if (p.name == name) throw invalid_state("duplicate parameter name: " + name);
        params_.emplace_back(std::move(name), std::move(tensor), trainable);
        return params_.back();
    }

    Parameter& get(const std::string& name) {
        for (auto& p : params_)
            if (p.name == name) return p;
        throw invalid_state("unknown parameter name: " + name);
    }
    const Parameter& get(const std::string& name) const {
        for (const auto& p : params_)
            if (p.name == name) return p;
        throw invalid_state("unknown parameter name: " + name);
    }
    bool contains(const std::string& name) const {
        for (const auto& p : params_)
            if (p.name == name) return true;
        return false;
    }

    std::vector<Parameter>& all() { return params_; }
    const std::vector<Parameter>& all() const { return params_; }
    std::size_t size() const { return params_.size(); }

    std::vector<Parameter*> trainable() {
        std::vector<Parameter*> out;
        for (auto& p : params_)
            if (p.trainable) out.push_back(&p);
        return out;
    }

    std::size_t total_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.tensor.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

private:
    std::vector<Parameter> params_;
};

}  // namespace tamcl
