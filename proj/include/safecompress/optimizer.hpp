#pragma once

#include <cmath>
#include <map>
#include <string>

#include "safecompress/tensor.hpp"

namespace safecompress {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Sgd;
    double learning_rate = 0.1;
    double momentum = 0.0;  // sgd only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// L2 penalty folded into the gradient before the update.
    double weight_decay = 0.0;

    static OptimizerConfig sgd(double lr, double momentum = 0.0) {
        OptimizerConfig c;
        c.kind = OptimizerKind::Sgd;
        c.learning_rate = lr;
        c.momentum = momentum;
        return c;
    }
    static OptimizerConfig adam(double lr, double weight_decay = 0.0) {
        OptimizerConfig c;
        c.kind = OptimizerKind::Adam;
        c.learning_rate = lr;
        c.weight_decay = weight_decay;
        return c;
    }

    bool operator==(const OptimizerConfig&) const = default;
};

/// Binary masks keyed by parameter name. Parameters without an entry are
/// dense.
using MaskBindings = std::map<std::string, const BoolMatrix*>;

/// First-order optimizer with per-parameter state. Masked positions get a
/// zero gradient, so Adam moments never build up there, and the weight is
/// forced back to exactly zero after every update.
template <typename Scalar>
class Optimizer {
public:
    using Storage = MatrixT<Scalar>;

    Optimizer() = default;
    explicit Optimizer(OptimizerConfig config) : config_(config) {}

    const OptimizerConfig& config() const noexcept { return config_; }
    long step_count() const noexcept { return steps_; }

    /// Updates every tensor in `params` in place and clears its gradient.
    /// Throws MissingGradientError, before touching anything, if any tensor
    /// lacks a gradient.
    void step(ParameterMapT<Scalar>& params, const MaskBindings& masks = {}) {
        for (const auto& [name, t] : params)
            if (!t.has_grad()) throw MissingGradientError("parameter '" + name + "' has no gradient");
        ++steps_;
        for (auto& [name, t] : params) {
            const BoolMatrix* mask = nullptr;
            if (auto it = masks.find(name); it != masks.end()) mask = it->second;

            Storage g = t.grad();
            if (config_.weight_decay != 0.0) g += Scalar(config_.weight_decay) * t.values();
            if (mask) g = mask->select(g, Scalar(0));

            if (config_.kind == OptimizerKind::Sgd) {
                if (config_.momentum != 0.0) {
                    auto [it, fresh] = first_.try_emplace(name, g);
                    if (!fresh) it->second = Scalar(config_.momentum) * it->second + g;
                    t.values() -= Scalar(config_.learning_rate) * it->second;
                } else {
                    t.values() -= Scalar(config_.learning_rate) * g;
                }
            } else {
                auto [mit, mfresh] = first_.try_emplace(name, Storage::Zero(g.rows(), g.cols()));
                auto [vit, vfresh] = second_.try_emplace(name, Storage::Zero(g.rows(), g.cols()));
                Storage& m = mit->second;
                Storage& v = vit->second;
                const Scalar b1 = Scalar(config_.beta1), b2 = Scalar(config_.beta2);
                m = b1 * m + (Scalar(1) - b1) * g;
                v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
                const Scalar c1 = Scalar(1) - std::pow(b1, Scalar(steps_));
                const Scalar c2 = Scalar(1) - std::pow(b2, Scalar(steps_));
                const Scalar lr = Scalar(config_.learning_rate);
                t.values().array() -=
                    lr * (m.array() / c1) / ((v.array() / c2).sqrt() + Scalar(config_.epsilon));
            }
            if (mask) t.values() = mask->select(t.values(), Scalar(0));
            t.clear_grad();
        }
    }

private:
    OptimizerConfig config_;
    long steps_ = 0;
    std::map<std::string, Storage> first_;
    std::map<std::string, Storage> second_;
};

/// One-shot convenience wrapper over a fresh optimizer. Stateful rules (Adam,
/// momentum) need a persistent Optimizer instead.
inline void optimizer_step(ParameterMap& params, const OptimizerConfig& config, const MaskBindings& masks = {}) {
    Optimizer<double> opt(config);
    opt.step(params, masks);
}

}  // namespace safecompress
