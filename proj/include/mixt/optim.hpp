#pragma once

#include <cmath>
#include <map>
#include <string>

#include "mixt/common.hpp"
#include "mixt/graph.hpp"
#include "mixt/params.hpp"
#include "mixt/tensor.hpp"

namespace mixt {

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;
inline constexpr double kPi = 3.14159265358979323846;

// Warmup steps for a run: ceil(ratio * total_steps).
inline int warmup_steps_for(int total_steps, double warmup_ratio) {
    require(total_steps >= 0, "total_steps must be non-negative");
    require(warmup_ratio >= 0.0 && warmup_ratio <= 1.0, "warmup_ratio must lie in [0, 1]");
    return static_cast<int>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
}

// Learning rate at a step: linear warmup from 0 to lr over the warmup steps,
// then cosine decay from lr to 0 at total_steps. Steps outside
// [0, total_steps] clamp to the nearest endpoint.
inline double lr_at(int step, int total_steps, double lr, double warmup_ratio) {
    require(lr > 0.0, "lr must be positive");
    const int warmup = warmup_steps_for(total_steps, warmup_ratio);
    if (step < 0) step = 0;
    if (step >= total_steps) return total_steps == warmup ? lr : 0.0;
    if (step < warmup) return lr * static_cast<double>(step) / static_cast<double>(warmup);
    const double progress =
        static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
    return lr * 0.5 * (1.0 + std::cos(progress * kPi));
}

// Global L2 norm over every gradient in the buffer.
inline double global_grad_norm(const GradBuffer& grads) {
    double sq = 0.0;
    for (const Tensor& g : grads.grads)
        for (double v : g.data) sq += v * v;
    return std::sqrt(sq);
}

// Scales all gradients so their global norm is at most max_norm. Returns the
// norm before clipping.
inline double clip_global_norm(GradBuffer& grads, double max_norm) {
    require(max_norm > 0.0, "clip norm must be positive");
    const double norm = global_grad_norm(grads);
    if (norm > max_norm) grads.scale_all(max_norm / norm);
    return norm;
}

// Adaptive-moment optimizer with decoupled weight decay: decay is applied
// directly to the weights rather than folded into the gradient. Moment
// tensors are keyed by parameter name so they serialize next to the
// parameters and survive checkpoint roundtrips.
class AdamW {
  public:
    uint64_t t = 0;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;

    void step(ParameterStore& store, const GradBuffer& grads, double lr, double weight_decay) {
        require(lr >= 0.0, "lr must be non-negative");
        require(weight_decay >= 0.0, "weight_decay must be non-negative");
        ++t;
        const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
        for (int i = 0; i < store.count(); ++i) {
            if (!store.trainable(i)) continue;
            Tensor& p = store.value(i);
            Tensor& mi = moment(m, store.name(i), p);
            Tensor& vi = moment(v, store.name(i), p);
            const bool has_grad =
                i < static_cast<int>(grads.grads.size()) && !grads.grads[i].data.empty();
            for (size_t k = 0; k < p.data.size(); ++k) {
                const double g = has_grad ? grads.grads[i].data[k] : 0.0;
                mi.data[k] = kAdamBeta1 * mi.data[k] + (1.0 - kAdamBeta1) * g;
                vi.data[k] = kAdamBeta2 * vi.data[k] + (1.0 - kAdamBeta2) * g * g;
                const double mhat = mi.data[k] / bc1;
                const double vhat = vi.data[k] / bc2;
                p.data[k] -= lr * (mhat / (std::sqrt(vhat) + kAdamEps) + weight_decay * p.data[k]);
            }
        }
    }

  private:
    static Tensor& moment(std::map<std::string, Tensor>& table, const std::string& name,
                          const Tensor& like) {
        auto it = table.find(name);
        if (it == table.end()) it = table.emplace(name, Tensor::zeros(like.rows, like.cols)).first;
        if (it->second.rows != like.rows || it->second.cols != like.cols)
            fail("optimizer moment shape mismatch for ", name);
        return it->second;
    }
};

}  // namespace mixt
