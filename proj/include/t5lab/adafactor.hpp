#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "t5lab/params.hpp"

namespace t5lab {

// Factored second-moment optimizer state. Rank-2 parameters keep a row vector R and a
// column vector C; rank-0/1 parameters keep a full accumulator. All slots start at zero:
// the decay schedule beta2(1) = 0 makes the first update use the raw squared gradient.
template <class Real>
struct AdafactorState {
    struct Slot {
        std::vector<Real> row;   // factored: per-row mean of g^2+eps
        std::vector<Real> col;   // factored: per-column mean
        std::vector<Real> full;  // unfactored fallback
    };
    std::map<std::string, Slot> slots;
    int64_t step = 0;
};

template <class Real>
AdafactorState<Real> adafactor_init(const ParameterStore<Real>& params) {
    AdafactorState<Real> state;
    for (const auto& [name, t] : params.tensors) {
        auto& slot = state.slots[name];
        if (t.rank() == 2) {
            slot.row.assign(static_cast<size_t>(t.rows()), Real(0));
            slot.col.assign(static_cast<size_t>(t.cols()), Real(0));
        } else {
            slot.full.assign(t.data.size(), Real(0));
        }
    }
    return state;
}

// One update with decay beta2(t) = 1 - t^-0.8, eps1 = 1e-30, update clipping at RMS 1.0,
// no momentum, no weight decay, constant external learning rate. For matrices the
// second-moment estimate is reconstructed as V = R (x) C / mean(R).
template <class Real>
void adafactor_step(ParameterStore<Real>& params, AdafactorState<Real>& state, Real lr) {
    state.step += 1;
    const Real beta = Real(1) - static_cast<Real>(std::pow(static_cast<double>(state.step), -0.8));
    const Real eps1 = Real(1e-30);

    for (auto& [name, t] : params.tensors) {
        auto it = state.slots.find(name);
        if (it == state.slots.end()) throw Error("adafactor: no slot for parameter " + name);
        auto& slot = it->second;
        if (t.grad.size() != t.data.size()) {
            t.ensure_grad();  // no gradient recorded: treated as zero, accumulators still decay
        }
        for (Real gv : t.grad) {
            if (!std::isfinite(static_cast<double>(gv))) {
                throw NonFiniteError("adafactor: non-finite gradient for " + name);
            }
        }

        std::vector<Real> update(t.data.size());
        if (t.rank() == 2) {
            int64_t m = t.rows(), n = t.cols();
            for (int64_t i = 0; i < m; ++i) {
                Real s = 0;
                for (int64_t j = 0; j < n; ++j) {
                    Real gv = t.grad[static_cast<size_t>(i * n + j)];
                    s += gv * gv + eps1;
                }
                slot.row[static_cast<size_t>(i)] =
                    beta * slot.row[static_cast<size_t>(i)] + (Real(1) - beta) * (s / Real(n));
            }
            for (int64_t j = 0; j < n; ++j) {
                Real s = 0;
                for (int64_t i = 0; i < m; ++i) {
                    Real gv = t.grad[static_cast<size_t>(i * n + j)];
                    s += gv * gv + eps1;
                }
                slot.col[static_cast<size_t>(j)] =
                    beta * slot.col[static_cast<size_t>(j)] + (Real(1) - beta) * (s / Real(m));
            }
            Real row_mean = 0;
            for (Real rv : slot.row) row_mean += rv;
            row_mean /= Real(m);
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < n; ++j) {
                    Real v = slot.row[static_cast<size_t>(i)] * slot.col[static_cast<size_t>(j)] / row_mean;
                    update[static_cast<size_t>(i * n + j)] =
                        t.grad[static_cast<size_t>(i * n + j)] / std::sqrt(v);
                }
            }
        } else {
            for (size_t i = 0; i < t.data.size(); ++i) {
                Real gv = t.grad[i];
                slot.full[i] = beta * slot.full[i] + (Real(1) - beta) * (gv * gv + eps1);
                update[i] = gv / std::sqrt(slot.full[i]);
            }
        }

        Real ms = 0;
        for (Real uv : update) ms += uv * uv;
        Real rms = std::sqrt(ms / Real(update.size()));
        Real scale = rms > Real(1) ? Real(1) / rms : Real(1);
        for (size_t i = 0; i < t.data.size(); ++i) t.data[i] -= lr * scale * update[i];
    }
}

}  // namespace t5lab
