#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "safecompress/autograd.hpp"
#include "safecompress/dataset.hpp"
#include "safecompress/optimizer.hpp"
#include "safecompress/random.hpp"
#include "safecompress/sparse_mask.hpp"

namespace safecompress {

/// Masked feed-forward ReLU classifier. Weights of layer k are (dims[k+1],
/// dims[k]) and carry the mask; biases are always dense.
class TargetModel {
public:
    TargetModel() = default;
    TargetModel(std::vector<Index> layer_dims, ParameterMap params, SparseMask mask);

    const std::vector<Index>& layer_dims() const noexcept { return dims_; }
    std::size_t layer_count() const noexcept { return dims_.size() - 1; }
    LayerShape layer_shape(std::size_t k) const { return {dims_.at(k), dims_.at(k + 1)}; }
    std::vector<LayerShape> layer_shapes() const;
    int class_count() const noexcept { return static_cast<int>(dims_.back()); }
    Index input_dim() const noexcept { return dims_.front(); }
    Index last_hidden_dim() const noexcept { return dims_[dims_.size() - 2]; }

    static std::string weight_name(std::size_t k) { return "layer" + std::to_string(k) + ".weight"; }
    static std::string bias_name(std::size_t k) { return "layer" + std::to_string(k) + ".bias"; }

    ParameterMap& params() noexcept { return params_; }
    const ParameterMap& params() const noexcept { return params_; }
    Matrix& weight(std::size_t k) { return params_.at(weight_name(k)).values(); }
    const Matrix& weight(std::size_t k) const { return params_.at(weight_name(k)).values(); }
    const Matrix& bias(std::size_t k) const { return params_.at(bias_name(k)).values(); }

    SparseMask& mask() noexcept { return mask_; }
    const SparseMask& mask() const noexcept { return mask_; }
    MaskBindings mask_bindings() const;

    std::uint64_t iterations_done() const noexcept { return iterations_; }
    void advance_iterations(std::uint64_t n) noexcept { iterations_ += n; }
    void set_iterations(std::uint64_t n) noexcept { iterations_ = n; }

    /// Appends this network to `g`, reading features from `x`; returns the
    /// logits node.
    NodeId build(Graph<double>& g, NodeId x) const;

    Matrix logits(const Matrix& features) const;
    Matrix probabilities(const Matrix& features) const;

    /// Logits plus the activations feeding the final affine layer.
    struct Activations {
        Matrix logits;
        Matrix last_hidden;
    };
    Activations forward_with_hidden(const Matrix& features) const;

    /// Inactive positions holding a nonzero weight. Zero when consistent.
    Index mask_violations() const;
    /// Zeroes every inactive weight.
    void apply_mask();

private:
    std::vector<Index> dims_;
    ParameterMap params_;
    SparseMask mask_;
    std::uint64_t iterations_ = 0;
};

/// ER-initialised masked MLP. `layer_dims` = {inputs, hidden..., classes}.
/// Active weights are He-normal with the fan-in scaled by the layer density;
/// biases start at zero.
TargetModel build_mlp(std::span<const Index> layer_dims, double omega, std::uint64_t seed);

struct TrainConfig {
    long iterations = 200;
    Index batch_size = 64;
    OptimizerConfig optimizer = OptimizerConfig::sgd(0.1);

    bool operator==(const TrainConfig&) const = default;
};

struct FineTuneConfig {
    long epochs = 5;
    Index batch_size = 128;
    OptimizerConfig optimizer = OptimizerConfig::adam(5e-4, 0.05);

    bool operator==(const FineTuneConfig&) const = default;
};

/// Cycles through seeded reshuffles of a dataset in fixed-size minibatches.
class MinibatchSampler {
public:
    MinibatchSampler(std::size_t n, Index batch_size, std::uint64_t seed);
    std::vector<std::size_t> next();
    std::size_t batches_per_epoch() const noexcept;

private:
    std::size_t n_;
    std::size_t batch_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

/// Mean cross-entropy of `model` on the given rows.
double batch_loss(const TargetModel& model, const Matrix& features, const Matrix& label_column);

/// One plain minibatch descent step on cross-entropy.
void train_step(TargetModel& model, Optimizer<double>& optimizer, const Matrix& features, const Matrix& label_column);

/// Exactly `config.iterations` minibatch steps.
void train_rounds(TargetModel& model, const LabeledDataset& data, const TrainConfig& config, std::uint64_t seed);

/// `config.epochs` passes over `data` with the fine-tune optimizer.
void fine_tune(TargetModel& model, const LabeledDataset& data, const FineTuneConfig& config, std::uint64_t seed);

/// Fraction of rows whose argmax prediction (lowest index on ties) matches.
double task_accuracy(const TargetModel& model, const LabeledDataset& data);

/// Row-wise argmax, lowest index on ties.
std::vector<int> argmax_rows(const Matrix& scores);

/// d(mean CE)/dW for every weight matrix at every position, active or not.
/// The mask constrains the weights (inactive ones are zero) but not the
/// gradient flow, so inactive positions get a well-defined |dL/dw|.
std::vector<Matrix> dense_weight_gradients(const TargetModel& model, const Matrix& features,
                                           const Matrix& label_column);

}  // namespace safecompress
