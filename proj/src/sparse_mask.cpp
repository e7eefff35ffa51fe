#include "safecompress/sparse_mask.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

namespace safecompress {

SparseMask::SparseMask(std::vector<BoolMatrix> layers, double target_density)
    : layers_(std::move(layers)), target_density_(target_density) {
    if (!(target_density > 0.0 && target_density <= 1.0))
        throw RangeError("target density must lie in (0, 1], got " + std::to_string(target_density));
}

Index SparseMask::active_count() const {
    Index n = 0;
    for (const auto& l : layers_) n += l.count();
    return n;
}

Index SparseMask::active_count(std::size_t k) const { return layers_.at(k).count(); }

Index SparseMask::total_count() const {
    Index n = 0;
    for (const auto& l : layers_) n += l.size();
    return n;
}

double SparseMask::active_fraction() const {
    const Index total = total_count();
    return total == 0 ? 0.0 : static_cast<double>(active_count()) / static_cast<double>(total);
}

Index SparseMask::budget() const {
    return static_cast<Index>(std::floor(target_density_ * static_cast<double>(total_count()) + 1e-9));
}

std::uint64_t SparseMask::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t byte) {
        h ^= byte;
        h *= 0x100000001b3ULL;
    };
    auto mix_word = [&mix](std::uint64_t w) {
        for (int i = 0; i < 8; ++i) mix((w >> (8 * i)) & 0xff);
    };
    mix_word(layers_.size());
    for (const auto& l : layers_) {
        mix_word(static_cast<std::uint64_t>(l.rows()));
        mix_word(static_cast<std::uint64_t>(l.cols()));
        for (Index i = 0; i < l.size(); ++i) mix(l.data()[i] ? 1 : 0);
    }
    return h;
}

bool SparseMask::operator==(const SparseMask& other) const {
    if (layers_.size() != other.layers_.size()) return false;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        const auto &a = layers_[k], &b = other.layers_[k];
        if (a.rows() != b.rows() || a.cols() != b.cols() || (a != b).any()) return false;
    }
    return true;
}

int UpdateStrategy::order() const noexcept {
    return (prune == PruneKind::Threshold ? 2 : 0) + (grow == GrowKind::Random ? 1 : 0);
}

std::string UpdateStrategy::name() const {
    std::string s = prune == PruneKind::Magnitude ? "magnitude" : "threshold";
    s += grow == GrowKind::Gradient ? "+gradient" : "+random";
    return s;
}

UpdateStrategy UpdateStrategy::parse(std::string_view name) {
    for (const auto& s : all())
        if (s.name() == name) return s;
    throw RangeError("unknown update strategy '" + std::string(name) + "'");
}

std::array<UpdateStrategy, 4> UpdateStrategy::all() {
    return {UpdateStrategy{PruneKind::Magnitude, GrowKind::Gradient},
            UpdateStrategy{PruneKind::Magnitude, GrowKind::Random},
            UpdateStrategy{PruneKind::Threshold, GrowKind::Gradient},
            UpdateStrategy{PruneKind::Threshold, GrowKind::Random}};
}

double er_probability(LayerShape shape, double epsilon) {
    const double n = static_cast<double>(shape.n_cur), m = static_cast<double>(shape.n_prev);
    return std::min(1.0, epsilon * (n + m) / (n * m));
}

double er_expected_fraction(std::span<const LayerShape> shapes, double epsilon) {
    double active = 0.0, total = 0.0;
    for (const auto& s : shapes) {
        active += er_probability(s, epsilon) * static_cast<double>(s.size());
        total += static_cast<double>(s.size());
    }
    return active / total;
}

ErInitResult er_init(std::span<const LayerShape> shapes, double omega, std::uint64_t seed) {
    if (!(omega > 0.0 && omega <= 1.0)) throw RangeError("omega must lie in (0, 1], got " + std::to_string(omega));
    if (shapes.empty()) throw RangeError("er_init needs at least one layer");
    for (const auto& s : shapes)
        if (s.n_prev < 1 || s.n_cur < 1) throw RangeError("layer dimensions must be >= 1");

    // At eps_cap every layer is fully connected.
    double eps_cap = 0.0;
    for (const auto& s : shapes) {
        const double n = static_cast<double>(s.n_cur), m = static_cast<double>(s.n_prev);
        eps_cap = std::max(eps_cap, n * m / (n + m));
    }
    if (er_expected_fraction(shapes, eps_cap) < omega)
        throw RangeError("omega " + std::to_string(omega) + " is infeasible for these layer sizes");

    double eps = eps_cap;
    if (omega < 1.0) {
        double lo = 0.0, hi = eps_cap;
        for (int it = 0; it < 200 && hi - lo > 1e-14 * eps_cap; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (er_expected_fraction(shapes, mid) < omega)
                lo = mid;
            else
                hi = mid;
        }
        eps = 0.5 * (lo + hi);
    }

    ErInitResult out;
    out.epsilon = eps;
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<BoolMatrix> layers;
    for (const auto& s : shapes) {
        const double p = er_probability(s, eps);
        out.layer_probability.push_back(p);
        BoolMatrix m(s.n_cur, s.n_prev);
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = p >= 1.0 || unit(rng) < p;
        layers.push_back(std::move(m));
    }
    out.mask = SparseMask(std::move(layers), omega);

    const Index budget = out.mask.budget();
    Index active = out.mask.active_count();
    if (active > budget) {
        std::vector<std::pair<std::size_t, Index>> positions;
        positions.reserve(static_cast<std::size_t>(active));
        for (std::size_t k = 0; k < out.mask.layer_count(); ++k) {
            const BoolMatrix& l = out.mask.layer(k);
            for (Index i = 0; i < l.size(); ++i)
                if (l.data()[i]) positions.emplace_back(k, i);
        }
        auto order = permutation(positions.size(), rng);
        for (Index r = 0; r < active - budget; ++r) {
            const auto& [k, i] = positions[order[static_cast<std::size_t>(r)]];
            out.mask.layer(k).data()[i] = false;
        }
    }
    return out;
}

namespace {

std::vector<Index> active_positions(const BoolMatrix& mask, bool active) {
    std::vector<Index> out;
    for (Index i = 0; i < mask.size(); ++i)
        if (mask.data()[i] == active) out.push_back(i);
    return out;
}

void check_same_shape(const BoolMatrix& mask, const Matrix& m, const char* what) {
    if (mask.rows() != m.rows() || mask.cols() != m.cols())
        throw ShapeError(std::string(what) + " shape does not match mask");
}

std::vector<Index> smallest_magnitudes(std::vector<Index> candidates, const Matrix& weights, Index count) {
    std::stable_sort(candidates.begin(), candidates.end(), [&](Index a, Index b) {
        return std::abs(weights.data()[a]) < std::abs(weights.data()[b]);
    });
    candidates.resize(static_cast<std::size_t>(count));
    return candidates;
}

void deactivate(BoolMatrix& mask, Matrix& weights, std::span<const Index> positions) {
    for (Index i : positions) {
        mask.data()[i] = false;
        weights.data()[i] = 0.0;
    }
}

void activate(BoolMatrix& mask, Matrix& weights, std::span<const Index> positions) {
    for (Index i : positions) {
        mask.data()[i] = true;
        weights.data()[i] = 0.0;
    }
}

/// Splits inactive positions into (preferred, deprioritized), each ascending.
std::pair<std::vector<Index>, std::vector<Index>> growth_pools(const BoolMatrix& mask,
                                                               std::span<const Index> deprioritized) {
    std::vector<bool> late(static_cast<std::size_t>(mask.size()), false);
    for (Index i : deprioritized) late.at(static_cast<std::size_t>(i)) = true;
    std::vector<Index> first, second;
    for (Index i = 0; i < mask.size(); ++i) {
        if (mask.data()[i]) continue;
        (late[static_cast<std::size_t>(i)] ? second : first).push_back(i);
    }
    return {std::move(first), std::move(second)};
}

void check_grow_count(const BoolMatrix& mask, Index count) {
    const Index inactive = mask.size() - mask.count();
    if (count < 0 || count > inactive)
        throw RangeError("grow count " + std::to_string(count) + " outside [0, " + std::to_string(inactive) + "]");
}

}  // namespace

std::vector<Index> magnitude_prune(BoolMatrix& mask, Matrix& weights, Index count) {
    check_same_shape(mask, weights, "weights");
    const Index active = mask.count();
    if (count < 0 || count > active)
        throw RangeError("prune count " + std::to_string(count) + " outside [0, " + std::to_string(active) + "]");
    auto pruned = smallest_magnitudes(active_positions(mask, true), weights, count);
    deactivate(mask, weights, pruned);
    return pruned;
}

std::vector<Index> threshold_prune(BoolMatrix& mask, Matrix& weights, double tau, Index cap) {
    check_same_shape(mask, weights, "weights");
    if (!(tau >= 0.0)) throw RangeError("threshold must be non-negative");
    std::vector<Index> below;
    for (Index i = 0; i < mask.size(); ++i)
        if (mask.data()[i] && std::abs(weights.data()[i]) < tau) below.push_back(i);
    if (cap >= 0 && static_cast<Index>(below.size()) > cap) below = smallest_magnitudes(std::move(below), weights, cap);
    deactivate(mask, weights, below);
    return below;
}

std::vector<Index> gradient_grow(BoolMatrix& mask, Matrix& weights, const Matrix& dense_grads, Index count,
                                 std::span<const Index> deprioritized) {
    check_same_shape(mask, weights, "weights");
    check_same_shape(mask, dense_grads, "gradient");
    check_grow_count(mask, count);
    auto [first, second] = growth_pools(mask, deprioritized);
    auto by_grad = [&](Index a, Index b) {
        return std::abs(dense_grads.data()[a]) > std::abs(dense_grads.data()[b]);
    };
    std::stable_sort(first.begin(), first.end(), by_grad);
    std::stable_sort(second.begin(), second.end(), by_grad);
    first.insert(first.end(), second.begin(), second.end());
    first.resize(static_cast<std::size_t>(count));
    activate(mask, weights, first);
    return first;
}

std::vector<Index> random_grow(BoolMatrix& mask, Matrix& weights, Index count, Rng& rng,
                               std::span<const Index> deprioritized) {
    check_same_shape(mask, weights, "weights");
    check_grow_count(mask, count);
    auto [first, second] = growth_pools(mask, deprioritized);
    std::vector<Index> chosen;
    auto take = [&](std::vector<Index>& pool, std::size_t n) {
        // Partial Fisher-Yates: the first n slots become a uniform sample.
        for (std::size_t i = 0; i < n; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
            std::swap(pool[i], pool[pick(rng)]);
            chosen.push_back(pool[i]);
        }
    };
    const auto want = static_cast<std::size_t>(count);
    take(first, std::min(want, first.size()));
    if (chosen.size() < want) take(second, want - chosen.size());
    activate(mask, weights, chosen);
    return chosen;
}

}  // namespace safecompress
