#pragma once

#include <cstdint>
#include <vector>

#include "safecompress/sparse_mask.hpp"
#include "safecompress/target_model.hpp"

namespace safecompress {

/// Prune fraction for `round` (0-based) of `total_rounds`, decaying from
/// `initial` to 0 along a half cosine.
double cosine_prune_fraction(double initial, long round, long total_rounds);

/// ceil(p * active), computed so that exact products do not round up.
Index prune_quota(double prune_fraction, Index active);

/// Per-layer prune-then-regrow on a copy of `model`.
///
/// Magnitude pruning removes prune_quota(p, active) weights per layer;
/// threshold pruning removes whatever falls under `threshold`, capped at the
/// same quota. Exactly as many positions are then regrown in that layer, with
/// weights starting at zero, so every layer's active count is unchanged.
/// Positions pruned in this update are only regrown when nothing else is
/// inactive. `dense_grads` is required for gradient growth (one matrix per
/// weight layer, see dense_weight_gradients) and ignored otherwise.
TargetModel sparse_update(const TargetModel& model, UpdateStrategy strategy, double prune_fraction, double threshold,
                          const std::vector<Matrix>& dense_grads, std::uint64_t seed);

}  // namespace safecompress
