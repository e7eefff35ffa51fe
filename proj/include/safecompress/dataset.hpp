#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "safecompress/tensor.hpp"

namespace safecompress {

/// Feature rows with integer class labels in [0, class_count).
struct LabeledDataset {
    Matrix features;
    std::vector<int> labels;
    int class_count = 0;

    std::size_t size() const noexcept { return labels.size(); }
    bool empty() const noexcept { return labels.empty(); }
    Index feature_count() const noexcept { return features.cols(); }

    /// Throws DataError on label/row mismatch, out-of-range labels or
    /// non-finite features.
    void validate() const;

    LabeledDataset subset(std::span<const std::size_t> indices) const;

    /// Labels of `indices` as an (n, 1) column for graph inputs.
    Matrix label_column(std::span<const std::size_t> indices) const;
    Matrix label_column() const;
};

/// Rows of `source` selected by `indices`.
Matrix gather_rows(const Matrix& source, std::span<const std::size_t> indices);

Matrix one_hot(std::span<const int> labels, int class_count);

}  // namespace safecompress
