#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "safecompress/tensor.hpp"

namespace safecompress {

/// Handle to a node inside one Graph. Only meaningful for the graph that
/// created it.
struct NodeId {
    std::size_t index = 0;
};

enum class Op {
    Input,
    Parameter,
    Constant,
    MatMul,
    Affine,
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    Sigmoid,
    Log,
    Square,
    Softmax,
    LogSoftmax,
    CrossEntropy,
    BceWithLogits,
    Sum,
    Mean,
    ConcatCols,
};

inline std::string_view op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Parameter: return "parameter";
        case Op::Constant: return "constant";
        case Op::MatMul: return "matmul";
        case Op::Affine: return "affine";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::Relu: return "relu";
        case Op::Sigmoid: return "sigmoid";
        case Op::Log: return "log";
        case Op::Square: return "square";
        case Op::Softmax: return "softmax";
        case Op::LogSoftmax: return "log_softmax";
        case Op::CrossEntropy: return "cross_entropy";
        case Op::BceWithLogits: return "bce_with_logits";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::ConcatCols: return "concat_cols";
    }
    return "?";
}

enum class Reduction { Mean, Sum };

namespace detail {

/// Row-wise log-sum-exp, shifted by the row max.
template <typename Derived>
auto row_logsumexp(const Eigen::MatrixBase<Derived>& x) {
    using Scalar = typename Derived::Scalar;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> m = x.rowwise().maxCoeff();
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> lse(x.rows());
    for (Index i = 0; i < x.rows(); ++i)
        lse(i) = m(i) + std::log((x.row(i).array() - m(i)).exp().sum());
    return lse;
}

template <typename Scalar>
MatrixT<Scalar> row_softmax(const MatrixT<Scalar>& x) {
    MatrixT<Scalar> y(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
        const Scalar m = x.row(i).maxCoeff();
        y.row(i) = (x.row(i).array() - m).exp();
        y.row(i) /= y.row(i).sum();
    }
    return y;
}

template <typename Scalar>
Scalar softplus(Scalar z) {
    return std::max(z, Scalar(0)) + std::log1p(std::exp(-std::abs(z)));
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
    if (z >= 0) return Scalar(1) / (Scalar(1) + std::exp(-z));
    const Scalar e = std::exp(z);
    return e / (Scalar(1) + e);
}

}  // namespace detail

/// Define-then-run reverse-mode graph.
///
/// Nodes are appended in construction order, so the node vector is already a
/// topological order and the graph cannot contain cycles. Parameters are
/// referenced by name and resolved against a ParameterMap at forward time;
/// the graph itself owns no model state beyond cached intermediates, so one
/// graph can be reused for any model with matching parameter names.
template <typename Scalar>
class Graph {
public:
    using Storage = MatrixT<Scalar>;
    using Params = ParameterMapT<Scalar>;
    using Inputs = std::map<std::string, Storage>;

    NodeId input(std::string name) { return push(Op::Input, std::move(name), {}); }
    NodeId parameter(std::string name) { return push(Op::Parameter, std::move(name), {}); }
    NodeId constant(Storage value, std::string name = {}) {
        NodeId id = push(Op::Constant, std::move(name), {});
        nodes_[id.index].value = std::move(value);
        return id;
    }

    NodeId matmul(NodeId a, NodeId b) { return push(Op::MatMul, {}, {a, b}); }
    /// x * W^T + b with W stored as (out, in) and b a length-out row.
    NodeId affine(NodeId x, NodeId w, NodeId b) { return push(Op::Affine, {}, {x, w, b}); }
    /// Elementwise; `b` may be a single row broadcast over the batch.
    NodeId add(NodeId a, NodeId b) { return push(Op::Add, {}, {a, b}); }
    NodeId sub(NodeId a, NodeId b) { return push(Op::Sub, {}, {a, b}); }
    NodeId mul(NodeId a, NodeId b) { return push(Op::Mul, {}, {a, b}); }
    NodeId scale(NodeId a, Scalar s) {
        NodeId id = push(Op::Scale, {}, {a});
        nodes_[id.index].attr = s;
        return id;
    }
    NodeId relu(NodeId a) { return push(Op::Relu, {}, {a}); }
    NodeId sigmoid(NodeId a) { return push(Op::Sigmoid, {}, {a}); }
    NodeId log(NodeId a) { return push(Op::Log, {}, {a}); }
    NodeId square(NodeId a) { return push(Op::Square, {}, {a}); }
    NodeId softmax(NodeId a) { return push(Op::Softmax, {}, {a}); }
    NodeId log_softmax(NodeId a) { return push(Op::LogSoftmax, {}, {a}); }
    /// Mean over rows of -log softmax(logits)[label]. `labels` is an (n, 1)
    /// node holding class indices.
    NodeId cross_entropy(NodeId logits, NodeId labels) { return push(Op::CrossEntropy, {}, {logits, labels}); }
    /// Binary cross-entropy on raw logits against 0/1 targets, both (n, 1).
    NodeId bce_with_logits(NodeId logits, NodeId targets, Reduction reduction = Reduction::Mean) {
        NodeId id = push(Op::BceWithLogits, {}, {logits, targets});
        nodes_[id.index].attr = reduction == Reduction::Mean ? Scalar(1) : Scalar(0);
        return id;
    }
    NodeId sum(NodeId a) { return push(Op::Sum, {}, {a}); }
    NodeId mean(NodeId a) { return push(Op::Mean, {}, {a}); }
    NodeId concat_cols(std::vector<NodeId> parts) { return push(Op::ConcatCols, {}, std::move(parts)); }

    std::size_t node_count() const noexcept { return nodes_.size(); }
    Op op(NodeId id) const { return node(id).op; }
    std::string label(NodeId id) const {
        const Node& n = node(id);
        std::string s = std::string(op_name(n.op)) + "#" + std::to_string(id.index);
        if (!n.name.empty()) s += "(" + n.name + ")";
        return s;
    }

    /// Evaluates every ancestor of `root` and returns the root value.
    Tensor<Scalar> forward(NodeId root, const Inputs& inputs, const Params& params) {
        const std::vector<bool> needed = ancestors(root);
        forwarded_root_ = kNone;
        for (std::size_t i = 0; i <= root.index; ++i) {
            if (!needed[i]) continue;
            evaluate(i, inputs, params);
            nodes_[i].has_grad = false;
        }
        forwarded_root_ = root.index;
        needed_ = needed;
        return Tensor<Scalar>(nodes_[root.index].value);
    }

    const Storage& value(NodeId id) const { return node(id).value; }

    /// Propagates d(root)/d(node) back through the last forward pass. The root
    /// is seeded with ones, so a non-scalar root differentiates its sum.
    /// Parameter gradients are accumulated (+=) into `params`; the returned
    /// map holds just this pass's contribution.
    std::map<std::string, Storage> backward(NodeId root, Params& params) {
        if (forwarded_root_ != root.index)
            throw GraphStateError("backward called on " + label(root) + " before forward");
        for (std::size_t i = 0; i <= root.index; ++i) nodes_[i].has_grad = false;

        Node& r = nodes_[root.index];
        r.grad = Storage::Ones(r.value.rows(), r.value.cols());
        r.has_grad = true;

        std::map<std::string, Storage> out;
        for (std::size_t k = root.index + 1; k-- > 0;) {
            Node& n = nodes_[k];
            if (!needed_[k] || !n.has_grad) continue;
            if (n.op == Op::Parameter) {
                auto it = params.find(n.name);
                if (it == params.end()) throw GraphStateError("parameter '" + n.name + "' is not bound");
                it->second.accumulate_grad(n.grad);
                auto [slot, inserted] = out.try_emplace(n.name, n.grad);
                if (!inserted) slot->second += n.grad;
                continue;
            }
            propagate(k);
        }
        return out;
    }

    /// Gradient of the last backward pass w.r.t. any node (zero if untouched).
    Storage grad(NodeId id) const {
        const Node& n = node(id);
        if (!n.has_grad) return Storage::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

private:
    struct Node {
        Op op;
        std::string name;
        std::vector<NodeId> parents;
        Scalar attr{};
        Storage value;
        Storage grad;
        bool has_grad = false;
    };

    NodeId push(Op op, std::string name, std::vector<NodeId> parents) {
        for (NodeId p : parents)
            if (p.index >= nodes_.size()) throw GraphStateError("parent node does not belong to this graph");
        nodes_.push_back(Node{op, std::move(name), std::move(parents), Scalar{}, {}, {}, false});
        forwarded_root_ = kNone;
        return NodeId{nodes_.size() - 1};
    }

    const Node& node(NodeId id) const {
        if (id.index >= nodes_.size()) throw GraphStateError("node id out of range");
        return nodes_[id.index];
    }

    std::vector<bool> ancestors(NodeId root) const {
        node(root);
        std::vector<bool> needed(nodes_.size(), false);
        needed[root.index] = true;
        for (std::size_t k = root.index + 1; k-- > 0;) {
            if (!needed[k]) continue;
            for (NodeId p : nodes_[k].parents) needed[p.index] = true;
        }
        return needed;
    }

    [[noreturn]] void shape_fail(std::size_t k, const std::string& what) const {
        throw ShapeError("shape mismatch at " + label(NodeId{k}) + ": " + what);
    }

    static std::string dims(const Storage& m) {
        return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
    }

    const Storage& pv(const Node& n, std::size_t i) const { return nodes_[n.parents[i].index].value; }

    void evaluate(std::size_t k, const Inputs& inputs, const Params& params) {
        Node& n = nodes_[k];
        switch (n.op) {
            case Op::Input: {
                auto it = inputs.find(n.name);
                if (it == inputs.end()) throw GraphStateError("input '" + n.name + "' is not bound");
                n.value = it->second;
                break;
            }
            case Op::Parameter: {
                auto it = params.find(n.name);
                if (it == params.end()) throw GraphStateError("parameter '" + n.name + "' is not bound");
                n.value = it->second.values();
                break;
            }
            case Op::Constant: break;
            case Op::MatMul: {
                const Storage &a = pv(n, 0), &b = pv(n, 1);
                if (a.cols() != b.rows()) shape_fail(k, dims(a) + " * " + dims(b));
                n.value = a * b;
                break;
            }
            case Op::Affine: {
                const Storage &x = pv(n, 0), &w = pv(n, 1), &b = pv(n, 2);
                if (x.cols() != w.cols()) shape_fail(k, "input " + dims(x) + " vs weight " + dims(w));
                if (b.size() != w.rows()) shape_fail(k, "bias " + dims(b) + " vs weight " + dims(w));
                n.value = x * w.transpose();
                n.value.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(b.data(), b.size());
                break;
            }
            case Op::Add:
            case Op::Sub: {
                const Storage &a = pv(n, 0), &b = pv(n, 1);
                const Scalar sign = n.op == Op::Add ? Scalar(1) : Scalar(-1);
                if (a.rows() == b.rows() && a.cols() == b.cols()) {
                    n.value = a + sign * b;
                } else if (b.rows() == 1 && a.cols() == b.cols()) {
                    n.value = a;
                    n.value.rowwise() += sign * b.row(0);
                } else {
                    shape_fail(k, dims(a) + " vs " + dims(b));
                }
                break;
            }
            case Op::Mul: {
                const Storage &a = pv(n, 0), &b = pv(n, 1);
                if (a.rows() != b.rows() || a.cols() != b.cols()) shape_fail(k, dims(a) + " vs " + dims(b));
                n.value = a.cwiseProduct(b);
                break;
            }
            case Op::Scale: n.value = pv(n, 0) * n.attr; break;
            case Op::Relu: n.value = pv(n, 0).cwiseMax(Scalar(0)); break;
            case Op::Sigmoid: n.value = pv(n, 0).unaryExpr([](Scalar z) { return detail::sigmoid(z); }); break;
            case Op::Log: {
                const Storage& a = pv(n, 0);
                if ((a.array() <= Scalar(0)).any())
                    throw NonFiniteError("non-finite value at " + label(NodeId{k}) + ": log of non-positive input");
                n.value = a.array().log().matrix();
                break;
            }
            case Op::Square: n.value = pv(n, 0).cwiseAbs2(); break;
            case Op::Softmax: n.value = detail::row_softmax(pv(n, 0)); break;
            case Op::LogSoftmax: {
                const Storage& a = pv(n, 0);
                n.value = a;
                n.value.colwise() -= detail::row_logsumexp(a);
                break;
            }
            case Op::CrossEntropy: {
                const Storage &logits = pv(n, 0), &labels = pv(n, 1);
                if (labels.size() != logits.rows())
                    shape_fail(k, "labels " + dims(labels) + " vs logits " + dims(logits));
                check_labels(k, labels, logits.cols());
                const auto lse = detail::row_logsumexp(logits);
                Scalar total = 0;
                for (Index i = 0; i < logits.rows(); ++i)
                    total += lse(i) - logits(i, static_cast<Index>(labels.data()[i]));
                n.value = Storage::Constant(1, 1, total / static_cast<Scalar>(logits.rows()));
                break;
            }
            case Op::BceWithLogits: {
                const Storage &z = pv(n, 0), &t = pv(n, 1);
                if (z.cols() != 1 || t.rows() != z.rows() || t.cols() != 1)
                    shape_fail(k, "logits " + dims(z) + " vs targets " + dims(t));
                Scalar total = 0;
                for (Index i = 0; i < z.rows(); ++i)
                    total += detail::softplus(z(i, 0)) - t(i, 0) * z(i, 0);
                if (n.attr != Scalar(0)) total /= static_cast<Scalar>(z.rows());
                n.value = Storage::Constant(1, 1, total);
                break;
            }
            case Op::Sum: n.value = Storage::Constant(1, 1, pv(n, 0).sum()); break;
            case Op::Mean: n.value = Storage::Constant(1, 1, pv(n, 0).mean()); break;
            case Op::ConcatCols: {
                const Index rows = pv(n, 0).rows();
                Index cols = 0;
                for (std::size_t i = 0; i < n.parents.size(); ++i) {
                    if (pv(n, i).rows() != rows) shape_fail(k, "row count differs in part " + std::to_string(i));
                    cols += pv(n, i).cols();
                }
                n.value.resize(rows, cols);
                Index c = 0;
                for (std::size_t i = 0; i < n.parents.size(); ++i) {
                    n.value.middleCols(c, pv(n, i).cols()) = pv(n, i);
                    c += pv(n, i).cols();
                }
                break;
            }
        }
        if (!n.value.allFinite()) throw NonFiniteError("non-finite value produced at " + label(NodeId{k}));
    }

    void check_labels(std::size_t k, const Storage& labels, Index classes) const {
        for (Index i = 0; i < labels.size(); ++i) {
            const Scalar y = labels.data()[i];
            if (!(y >= 0) || y >= static_cast<Scalar>(classes) || y != std::floor(y))
                throw RangeError("label " + std::to_string(static_cast<double>(y)) + " out of range [0, " +
                                 std::to_string(classes) + ") at " + label(NodeId{k}));
        }
    }

    void send(NodeId to, const Storage& g) {
        Node& p = nodes_[to.index];
        if (!p.has_grad) {
            p.grad = g;
            p.has_grad = true;
        } else {
            p.grad += g;
        }
    }

    void propagate(std::size_t k) {
        const Node& n = nodes_[k];
        const Storage& g = n.grad;
        switch (n.op) {
            case Op::Input:
            case Op::Parameter:
            case Op::Constant: break;
            case Op::MatMul:
                send(n.parents[0], g * pv(n, 1).transpose());
                send(n.parents[1], pv(n, 0).transpose() * g);
                break;
            case Op::Affine: {
                send(n.parents[0], g * pv(n, 1));
                send(n.parents[1], g.transpose() * pv(n, 0));
                const Storage& b = pv(n, 2);
                Storage gb = g.colwise().sum();
                gb.resize(b.rows(), b.cols());
                send(n.parents[2], gb);
                break;
            }
            case Op::Add:
            case Op::Sub: {
                const Scalar sign = n.op == Op::Add ? Scalar(1) : Scalar(-1);
                send(n.parents[0], g);
                if (pv(n, 1).rows() == g.rows())
                    send(n.parents[1], sign * g);
                else
                    send(n.parents[1], sign * Storage(g.colwise().sum()));
                break;
            }
            case Op::Mul:
                send(n.parents[0], g.cwiseProduct(pv(n, 1)));
                send(n.parents[1], g.cwiseProduct(pv(n, 0)));
                break;
            case Op::Scale: send(n.parents[0], g * n.attr); break;
            case Op::Relu:
                send(n.parents[0], (pv(n, 0).array() > Scalar(0)).select(g, Scalar(0)).matrix());
                break;
            case Op::Sigmoid: {
                const Storage& y = n.value;
                send(n.parents[0], g.cwiseProduct(y.cwiseProduct((Scalar(1) - y.array()).matrix())));
                break;
            }
            case Op::Log: send(n.parents[0], g.cwiseQuotient(pv(n, 0))); break;
            case Op::Square: send(n.parents[0], Scalar(2) * g.cwiseProduct(pv(n, 0))); break;
            case Op::Softmax: {
                const Storage& y = n.value;
                Storage dx = y.cwiseProduct(g);
                const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> s = dx.rowwise().sum();
                dx -= (y.array().colwise() * s.array()).matrix();
                send(n.parents[0], dx);
                break;
            }
            case Op::LogSoftmax: {
                const Storage sm = detail::row_softmax(pv(n, 0));
                const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> s = g.rowwise().sum();
                send(n.parents[0], g - Storage(sm.array().colwise() * s.array()));
                break;
            }
            case Op::CrossEntropy: {
                const Storage& logits = pv(n, 0);
                const Storage& labels = pv(n, 1);
                Storage d = detail::row_softmax(logits);
                for (Index i = 0; i < logits.rows(); ++i) d(i, static_cast<Index>(labels.data()[i])) -= Scalar(1);
                d *= g(0, 0) / static_cast<Scalar>(logits.rows());
                send(n.parents[0], d);
                break;
            }
            case Op::BceWithLogits: {
                const Storage &z = pv(n, 0), &t = pv(n, 1);
                Storage d(z.rows(), 1);
                for (Index i = 0; i < z.rows(); ++i) d(i, 0) = detail::sigmoid(z(i, 0)) - t(i, 0);
                Scalar factor = g(0, 0);
                if (n.attr != Scalar(0)) factor /= static_cast<Scalar>(z.rows());
                send(n.parents[0], d * factor);
                break;
            }
            case Op::Sum: {
                const Storage& a = pv(n, 0);
                send(n.parents[0], Storage::Constant(a.rows(), a.cols(), g(0, 0)));
                break;
            }
            case Op::Mean: {
                const Storage& a = pv(n, 0);
                send(n.parents[0], Storage::Constant(a.rows(), a.cols(), g(0, 0) / static_cast<Scalar>(a.size())));
                break;
            }
            case Op::ConcatCols: {
                Index c = 0;
                for (std::size_t i = 0; i < n.parents.size(); ++i) {
                    const Index w = pv(n, i).cols();
                    send(n.parents[i], g.middleCols(c, w));
                    c += w;
                }
                break;
            }
        }
    }

    static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

    std::vector<Node> nodes_;
    std::vector<bool> needed_;
    std::size_t forwarded_root_ = kNone;
};

}  // namespace safecompress
