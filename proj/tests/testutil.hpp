#pragma once

#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "t5lab/graph.hpp"
#include "t5lab/params.hpp"
#include "t5lab/rng.hpp"
#include "t5lab/tensor.hpp"

namespace testutil {

using t5lab::Rng;
using t5lab::Shape;
using t5lab::Tensor;

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
    Tensor<double> t = Tensor<double>::zeros(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Central finite difference of a scalar function with respect to one component of one
// parameter tensor. The evaluation callback must rebuild its graph from scratch.
inline double fd_component(const std::function<double(const std::vector<Tensor<double>>&)>& eval,
                           std::vector<Tensor<double>>& params, size_t pi, size_t ci,
                           double eps = 1e-5) {
    double orig = params[pi].data[ci];
    params[pi].data[ci] = orig + eps;
    double up = eval(params);
    params[pi].data[ci] = orig - eps;
    double down = eval(params);
    params[pi].data[ci] = orig;
    return (up - down) / (2.0 * eps);
}

// Max of |autodiff - fd| / (|fd| + 1e-8) over every component of every parameter.
// autodiff_grads[pi] must hold d(loss)/d(params[pi]).
inline double fd_max_rel_err(const std::function<double(const std::vector<Tensor<double>>&)>& eval,
                             std::vector<Tensor<double>> params,
                             const std::vector<std::vector<double>>& autodiff_grads,
                             double eps = 1e-5) {
    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        for (size_t ci = 0; ci < params[pi].data.size(); ++ci) {
            double fd = fd_component(eval, params, pi, ci, eps);
            double ad = autodiff_grads[pi][ci];
            double rel = std::abs(ad - fd) / (std::abs(fd) + 1e-8);
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

// Overwrites every tensor of a store with uniform values; used to randomize whole models
// (including tables the standard init leaves at special values).
inline void randomize_store(t5lab::ParameterStore<double>& store, Rng& rng, double scale = 0.5) {
    for (auto& [name, t] : store.tensors) {
        for (auto& v : t.data) v = rng.uniform(-scale, scale);
    }
}

inline std::string temp_dir(const std::string& tag) {
    std::string templ = "/tmp/t5lab_" + tag + "_XXXXXX";
    std::vector<char> buf(templ.begin(), templ.end());
    buf.push_back('\0');
    char* got = mkdtemp(buf.data());
    if (!got) throw std::runtime_error("mkdtemp failed");
    return std::string(got);
}

}  // namespace testutil
