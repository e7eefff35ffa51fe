#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "safecompress/autograd.hpp"
#include "safecompress/random.hpp"
#include "safecompress/experiment.hpp"

namespace support {

using namespace safecompress;

inline double relative_error(double analytic, double numeric) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / scale;
}

inline Matrix random_matrix(Index rows, Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

struct GradCheck {
    double max_error = 0.0;
    std::size_t entries = 0;
};

/// Compares backward() against central differences of forward() for every
/// entry of every parameter.
inline GradCheck finite_difference_check(Graph<double>& g, NodeId root, const Graph<double>::Inputs& inputs,
                                         const ParameterMap& params, double h = 1e-6) {
    ParameterMap work = params;
    g.forward(root, inputs, work);
    const auto analytic = g.backward(root, work);
    GradCheck out;
    for (const auto& [name, t] : params) {
        for (Index i = 0; i < t.values().size(); ++i) {
            ParameterMap plus = params, minus = params;
            plus.at(name).values().data()[i] += h;
            minus.at(name).values().data()[i] -= h;
            const double fp = g.forward(root, inputs, plus).values()(0, 0);
            const double fm = g.forward(root, inputs, minus).values()(0, 0);
            const double numeric = (fp - fm) / (2.0 * h);
            out.max_error = std::max(out.max_error, relative_error(analytic.at(name).data()[i], numeric));
            ++out.entries;
        }
    }
    return out;
}

struct OpProblem {
    std::string name;
    Graph<double> graph;
    NodeId root;
    Graph<double>::Inputs inputs;
    ParameterMap params;
};

inline constexpr int kOpCaseCount = 20;

/// A small scalar-valued graph exercising one differentiable operation on
/// random tensors. Non-scalar results are reduced through a random weighting
/// so every output entry carries a distinct upstream gradient.
inline OpProblem make_op_problem(int op, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_int_distribution<Index> dim(1, 4);
    const Index r = dim(rng), c = dim(rng) + 1, k = dim(rng);
    OpProblem p;
    Graph<double>& g = p.graph;
    auto param = [&](const std::string& name, Matrix value) {
        p.params.emplace(name, Tensor<double>(std::move(value)));
        return g.parameter(name);
    };
    // Keeps ReLU inputs clear of the kink so central differences stay valid.
    auto away_from_zero = [&](Matrix m) {
        for (Index i = 0; i < m.size(); ++i) m.data()[i] += m.data()[i] >= 0 ? 0.05 : -0.05;
        return m;
    };
    NodeId out;
    switch (op) {
        case 0: p.name = "matmul"; out = g.matmul(param("a", random_matrix(r, k, rng)), param("b", random_matrix(k, c, rng))); break;
        case 1:
            p.name = "affine";
            out = g.affine(param("x", random_matrix(r, k, rng)), param("w", random_matrix(c, k, rng)),
                           param("b", random_matrix(1, c, rng)));
            break;
        case 2: p.name = "add"; out = g.add(param("a", random_matrix(r, c, rng)), param("b", random_matrix(r, c, rng))); break;
        case 3: p.name = "add_row"; out = g.add(param("a", random_matrix(r, c, rng)), param("b", random_matrix(1, c, rng))); break;
        case 4: p.name = "sub"; out = g.sub(param("a", random_matrix(r, c, rng)), param("b", random_matrix(r, c, rng))); break;
        case 5: p.name = "sub_row"; out = g.sub(param("a", random_matrix(r, c, rng)), param("b", random_matrix(1, c, rng))); break;
        case 6: p.name = "mul"; out = g.mul(param("a", random_matrix(r, c, rng)), param("b", random_matrix(r, c, rng))); break;
        case 7: p.name = "scale"; out = g.scale(param("a", random_matrix(r, c, rng)), -0.7); break;
        case 8: p.name = "relu"; out = g.relu(param("a", away_from_zero(random_matrix(r, c, rng)))); break;
        case 9: p.name = "sigmoid"; out = g.sigmoid(param("a", random_matrix(r, c, rng, -3, 3))); break;
        case 10: p.name = "log"; out = g.log(param("a", random_matrix(r, c, rng, 0.5, 2.0))); break;
        case 11: p.name = "square"; out = g.square(param("a", random_matrix(r, c, rng))); break;
        case 12: p.name = "softmax"; out = g.softmax(param("a", random_matrix(r, c, rng, -2, 2))); break;
        case 13: p.name = "log_softmax"; out = g.log_softmax(param("a", random_matrix(r, c, rng, -2, 2))); break;
        case 14: {
            p.name = "cross_entropy";
            Matrix labels(r, 1);
            std::uniform_int_distribution<int> cls(0, static_cast<int>(c) - 1);
            for (Index i = 0; i < r; ++i) labels(i, 0) = cls(rng);
            p.inputs.emplace("y", labels);
            p.root = g.cross_entropy(param("a", random_matrix(r, c, rng, -3, 3)), g.input("y"));
            return p;
        }
        case 15:
        case 16: {
            const bool sum = op == 16;
            p.name = sum ? "bce_sum" : "bce_mean";
            Matrix t(r, 1);
            std::bernoulli_distribution coin(0.5);
            for (Index i = 0; i < r; ++i) t(i, 0) = coin(rng) ? 1.0 : 0.0;
            p.inputs.emplace("t", t);
            p.root = g.bce_with_logits(param("z", random_matrix(r, 1, rng, -4, 4)), g.input("t"),
                                       sum ? Reduction::Sum : Reduction::Mean);
            return p;
        }
        case 17: p.name = "sum"; p.root = g.sum(param("a", random_matrix(r, c, rng))); return p;
        case 18: p.name = "mean"; p.root = g.mean(param("a", random_matrix(r, c, rng))); return p;
        case 19:
            p.name = "concat_cols";
            out = g.concat_cols({param("a", random_matrix(r, c, rng)), param("b", random_matrix(r, 1, rng)),
                                 param("c", random_matrix(r, k, rng))});
            break;
        default: throw RangeError("no such op case");
    }
    const Matrix shape = g.forward(out, p.inputs, p.params).values();
    p.root = g.sum(g.mul(out, g.constant(random_matrix(shape.rows(), shape.cols(), rng))));
    return p;
}

/// Small deliberately-overfitting setup shared by tests: noisy Gaussian
/// clusters, a few hundred training rows, no regularisation.
inline SyntheticSpec overfit_data() {
    SyntheticSpec s;
    s.train_size = 400;
    s.test_size = 400;
    s.features = 32;
    s.classes = 4;
    s.separation = 0.5;
    s.noise = 1.0;
    return s;
}

inline RunConfig overfit_run(SelectionMode mode, std::uint64_t seed) {
    RunConfig c;
    c.mode = mode;
    c.seed = seed;
    c.omega = 0.1;
    c.fine_tune.optimizer.weight_decay = 0.0;
    return c;
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace support
