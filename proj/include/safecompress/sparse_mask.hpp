#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "safecompress/random.hpp"
#include "safecompress/tensor.hpp"

namespace safecompress {

/// Connection block between a layer of `n_prev` units and one of `n_cur`
/// units; the weight matrix is stored (n_cur, n_prev).
struct LayerShape {
    Index n_prev = 0;
    Index n_cur = 0;

    Index size() const noexcept { return n_prev * n_cur; }
    bool operator==(const LayerShape&) const = default;
};

/// Per-layer binary activation pattern over weight positions plus the
/// density budget it must respect.
class SparseMask {
public:
    SparseMask() = default;
    SparseMask(std::vector<BoolMatrix> layers, double target_density);

    std::size_t layer_count() const noexcept { return layers_.size(); }
    const BoolMatrix& layer(std::size_t k) const { return layers_.at(k); }
    BoolMatrix& layer(std::size_t k) { return layers_.at(k); }
    const std::vector<BoolMatrix>& layers() const noexcept { return layers_; }

    /// Omega: the allowed fraction of active positions.
    double target_density() const noexcept { return target_density_; }

    Index active_count() const;
    Index active_count(std::size_t k) const;
    Index total_count() const;
    double active_fraction() const;

    /// Largest active count the budget allows: floor(omega * total).
    Index budget() const;

    /// FNV-1a over layer shapes and bits; stable across runs and platforms.
    std::uint64_t hash() const;

    bool operator==(const SparseMask& other) const;

private:
    std::vector<BoolMatrix> layers_;
    double target_density_ = 1.0;
};

enum class PruneKind { Magnitude, Threshold };
enum class GrowKind { Gradient, Random };

struct UpdateStrategy {
    PruneKind prune = PruneKind::Magnitude;
    GrowKind grow = GrowKind::Gradient;

    /// Position in the fixed enumeration used for tie-breaks:
    /// magnitude+gradient, magnitude+random, threshold+gradient, threshold+random.
    int order() const noexcept;
    std::string name() const;
    static UpdateStrategy parse(std::string_view name);
    static std::array<UpdateStrategy, 4> all();

    bool operator==(const UpdateStrategy&) const = default;
};

/// Connection probability of one layer under the Erdos-Renyi rule,
/// min(1, eps * (n_cur + n_prev) / (n_cur * n_prev)).
double er_probability(LayerShape shape, double epsilon);

/// Expected global active fraction for a given epsilon.
double er_expected_fraction(std::span<const LayerShape> shapes, double epsilon);

struct ErInitResult {
    SparseMask mask;
    double epsilon = 0.0;
    std::vector<double> layer_probability;
};

/// Draws an Erdos-Renyi mask whose expected density equals `omega`.
///
/// Epsilon is found by bisection on the expected fraction. Each position is
/// then an independent Bernoulli draw; if the realised count overshoots the
/// hard budget floor(omega * total), the excess is removed uniformly at random
/// so the density bound holds exactly, not just in expectation.
ErInitResult er_init(std::span<const LayerShape> shapes, double omega, std::uint64_t seed);

/// Deactivates the `count` active positions with the smallest |w| (ties to the
/// lower flat index) and zeroes their weights. Returns the flat indices.
std::vector<Index> magnitude_prune(BoolMatrix& mask, Matrix& weights, Index count);

/// Deactivates active positions with |w| < tau. With `cap`, at most that many
/// are removed (smallest |w| first). Returns the flat indices pruned.
std::vector<Index> threshold_prune(BoolMatrix& mask, Matrix& weights, double tau, Index cap = -1);

/// Activates the `count` inactive positions with the largest |grad| and sets
/// their weights to 0. Positions listed in `deprioritized` (e.g. ones pruned in
/// the same update) are only chosen once every other inactive position is.
std::vector<Index> gradient_grow(BoolMatrix& mask, Matrix& weights, const Matrix& dense_grads, Index count,
                                 std::span<const Index> deprioritized = {});

/// As gradient_grow but uniform without replacement.
std::vector<Index> random_grow(BoolMatrix& mask, Matrix& weights, Index count, Rng& rng,
                               std::span<const Index> deprioritized = {});

}  // namespace safecompress
