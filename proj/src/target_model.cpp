#include "safecompress/target_model.hpp"

#include <algorithm>
#include <cmath>

namespace safecompress {

namespace {

struct BuiltNet {
    NodeId last_hidden;
    NodeId logits;
};

BuiltNet build_net(const TargetModel& model, Graph<double>& g, NodeId x) {
    NodeId h = x;
    NodeId last_hidden = x;
    for (std::size_t k = 0; k < model.layer_count(); ++k) {
        last_hidden = h;
        NodeId z = g.affine(h, g.parameter(TargetModel::weight_name(k)), g.parameter(TargetModel::bias_name(k)));
        h = k + 1 < model.layer_count() ? g.relu(z) : z;
    }
    return {last_hidden, h};
}

}  // namespace

TargetModel::TargetModel(std::vector<Index> layer_dims, ParameterMap params, SparseMask mask)
    : dims_(std::move(layer_dims)), params_(std::move(params)), mask_(std::move(mask)) {
    if (dims_.size() < 2) throw ShapeError("a target model needs at least input and output dimensions");
    if (mask_.layer_count() != layer_count()) throw ShapeError("mask layer count does not match model");
    for (std::size_t k = 0; k < layer_count(); ++k) {
        const auto& w = params_.at(weight_name(k)).values();
        const auto& b = params_.at(bias_name(k)).values();
        if (w.rows() != dims_[k + 1] || w.cols() != dims_[k]) throw ShapeError("weight " + weight_name(k) + " has wrong shape");
        if (b.size() != dims_[k + 1]) throw ShapeError("bias " + bias_name(k) + " has wrong shape");
        if (mask_.layer(k).rows() != w.rows() || mask_.layer(k).cols() != w.cols())
            throw ShapeError("mask for layer " + std::to_string(k) + " has wrong shape");
    }
}

std::vector<LayerShape> TargetModel::layer_shapes() const {
    std::vector<LayerShape> out;
    for (std::size_t k = 0; k < layer_count(); ++k) out.push_back(layer_shape(k));
    return out;
}

MaskBindings TargetModel::mask_bindings() const {
    MaskBindings out;
    for (std::size_t k = 0; k < layer_count(); ++k) out[weight_name(k)] = &mask_.layer(k);
    return out;
}

NodeId TargetModel::build(Graph<double>& g, NodeId x) const { return build_net(*this, g, x).logits; }

Matrix TargetModel::logits(const Matrix& features) const { return forward_with_hidden(features).logits; }

Matrix TargetModel::probabilities(const Matrix& features) const {
    return detail::row_softmax(forward_with_hidden(features).logits);
}

TargetModel::Activations TargetModel::forward_with_hidden(const Matrix& features) const {
    Graph<double> g;
    const NodeId x = g.input("x");
    const BuiltNet net = build_net(*this, g, x);
    Tensor<double> out = g.forward(net.logits, {{"x", features}}, params_);
    return {std::move(out.values()), g.value(net.last_hidden)};
}

Index TargetModel::mask_violations() const {
    Index n = 0;
    for (std::size_t k = 0; k < layer_count(); ++k)
        n += ((!mask_.layer(k)) && (weight(k).array() != 0.0)).count();
    return n;
}

void TargetModel::apply_mask() {
    for (std::size_t k = 0; k < layer_count(); ++k) weight(k) = mask_.layer(k).select(weight(k), 0.0);
}

TargetModel build_mlp(std::span<const Index> layer_dims, double omega, std::uint64_t seed) {
    if (layer_dims.size() < 3) throw ShapeError("build_mlp needs at least one hidden layer");
    if (layer_dims.back() < 2) throw ShapeError("a classifier needs at least two classes");
    std::vector<Index> dims(layer_dims.begin(), layer_dims.end());
    std::vector<LayerShape> shapes;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) shapes.push_back({dims[k], dims[k + 1]});

    ErInitResult init = er_init(shapes, omega, derive_seed(seed, {1}));

    Rng rng(derive_seed(seed, {2}));
    std::normal_distribution<double> normal(0.0, 1.0);
    ParameterMap params;
    for (std::size_t k = 0; k < shapes.size(); ++k) {
        const double fan_in = std::max(1.0, static_cast<double>(shapes[k].n_prev) * init.layer_probability[k]);
        const double std_dev = std::sqrt(2.0 / fan_in);
        Matrix w(shapes[k].n_cur, shapes[k].n_prev);
        for (Index i = 0; i < w.size(); ++i) {
            const double draw = normal(rng) * std_dev;
            w.data()[i] = init.mask.layer(k).data()[i] ? draw : 0.0;
        }
        params.emplace(TargetModel::weight_name(k), Tensor<double>(std::move(w)));
        params.emplace(TargetModel::bias_name(k), Tensor<double>({shapes[k].n_cur}));
    }
    return TargetModel(std::move(dims), std::move(params), std::move(init.mask));
}

MinibatchSampler::MinibatchSampler(std::size_t n, Index batch_size, std::uint64_t seed)
    : n_(n), batch_(std::min<std::size_t>(n, static_cast<std::size_t>(std::max<Index>(1, batch_size)))), rng_(seed) {
    if (n == 0) throw DataError("cannot sample minibatches from an empty dataset");
    order_ = permutation(n_, rng_);
}

std::vector<std::size_t> MinibatchSampler::next() {
    if (cursor_ + batch_ > n_) {
        order_ = permutation(n_, rng_);
        cursor_ = 0;
    }
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
    cursor_ += batch_;
    return out;
}

std::size_t MinibatchSampler::batches_per_epoch() const noexcept { return (n_ + batch_ - 1) / batch_; }

double batch_loss(const TargetModel& model, const Matrix& features, const Matrix& label_column) {
    Graph<double> g;
    const NodeId loss = g.cross_entropy(model.build(g, g.input("x")), g.input("y"));
    return g.forward(loss, {{"x", features}, {"y", label_column}}, model.params())[0];
}

void train_step(TargetModel& model, Optimizer<double>& optimizer, const Matrix& features, const Matrix& label_column) {
    Graph<double> g;
    const NodeId loss = g.cross_entropy(model.build(g, g.input("x")), g.input("y"));
    g.forward(loss, {{"x", features}, {"y", label_column}}, model.params());
    g.backward(loss, model.params());
    optimizer.step(model.params(), model.mask_bindings());
    model.advance_iterations(1);
}

void train_rounds(TargetModel& model, const LabeledDataset& data, const TrainConfig& config, std::uint64_t seed) {
    if (data.empty()) throw DataError("train_rounds: empty dataset");
    if (config.iterations < 1) throw RangeError("train_rounds: iterations must be >= 1");
    MinibatchSampler sampler(data.size(), config.batch_size, seed);
    Optimizer<double> opt(config.optimizer);
    for (long it = 0; it < config.iterations; ++it) {
        const auto idx = sampler.next();
        train_step(model, opt, gather_rows(data.features, idx), data.label_column(idx));
    }
}

void fine_tune(TargetModel& model, const LabeledDataset& data, const FineTuneConfig& config, std::uint64_t seed) {
    if (data.empty()) throw DataError("fine_tune: empty dataset");
    if (config.epochs < 0) throw RangeError("fine_tune: epochs must be >= 0");
    MinibatchSampler sampler(data.size(), config.batch_size, seed);
    Optimizer<double> opt(config.optimizer);
    const long steps = config.epochs * static_cast<long>(sampler.batches_per_epoch());
    for (long it = 0; it < steps; ++it) {
        const auto idx = sampler.next();
        train_step(model, opt, gather_rows(data.features, idx), data.label_column(idx));
    }
}

std::vector<int> argmax_rows(const Matrix& scores) {
    std::vector<int> out(static_cast<std::size_t>(scores.rows()));
    for (Index i = 0; i < scores.rows(); ++i) {
        Index best = 0;
        for (Index j = 1; j < scores.cols(); ++j)
            if (scores(i, j) > scores(i, best)) best = j;
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

double task_accuracy(const TargetModel& model, const LabeledDataset& data) {
    if (data.empty()) throw DataError("task_accuracy: empty dataset");
    const auto pred = argmax_rows(model.logits(data.features));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

std::vector<Matrix> dense_weight_gradients(const TargetModel& model, const Matrix& features,
                                           const Matrix& label_column) {
    ParameterMap scratch = model.params();
    Graph<double> g;
    const NodeId loss = g.cross_entropy(model.build(g, g.input("x")), g.input("y"));
    g.forward(loss, {{"x", features}, {"y", label_column}}, scratch);
    auto grads = g.backward(loss, scratch);
    std::vector<Matrix> out;
    for (std::size_t k = 0; k < model.layer_count(); ++k) out.push_back(grads.at(TargetModel::weight_name(k)));
    return out;
}

}  // namespace safecompress
