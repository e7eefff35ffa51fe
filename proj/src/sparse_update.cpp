#include "safecompress/sparse_update.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace safecompress {

double cosine_prune_fraction(double initial, long round, long total_rounds) {
    if (total_rounds <= 0) return initial;
    const double t = static_cast<double>(round) / static_cast<double>(total_rounds);
    return initial * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

Index prune_quota(double prune_fraction, Index active) {
    if (!(prune_fraction >= 0.0 && prune_fraction <= 1.0)) throw RangeError("prune fraction must lie in [0, 1]");
    const double raw = prune_fraction * static_cast<double>(active);
    return std::min(active, static_cast<Index>(std::ceil(raw - 1e-9)));
}

TargetModel sparse_update(const TargetModel& model, UpdateStrategy strategy, double prune_fraction, double threshold,
                          const std::vector<Matrix>& dense_grads, std::uint64_t seed) {
    TargetModel out = model;
    if (strategy.grow == GrowKind::Gradient && dense_grads.size() != model.layer_count())
        throw RangeError("gradient growth needs one dense gradient per layer");
    Rng rng(seed);
    for (std::size_t k = 0; k < out.layer_count(); ++k) {
        BoolMatrix& mask = out.mask().layer(k);
        Matrix& w = out.weight(k);
        const Index quota = prune_quota(prune_fraction, mask.count());
        const std::vector<Index> pruned = strategy.prune == PruneKind::Magnitude
                                              ? magnitude_prune(mask, w, quota)
                                              : threshold_prune(mask, w, threshold, quota);
        const Index regrow = static_cast<Index>(pruned.size());
        if (strategy.grow == GrowKind::Gradient)
            gradient_grow(mask, w, dense_grads[k], regrow, pruned);
        else
            random_grow(mask, w, regrow, rng, pruned);
    }
    return out;
}

}  // namespace safecompress
