#include "safecompress/dataset.hpp"

#include <string>

namespace safecompress {

void LabeledDataset::validate() const {
    if (class_count < 1) throw DataError("class_count must be positive");
    if (static_cast<Index>(labels.size()) != features.rows())
        throw DataError("dataset has " + std::to_string(features.rows()) + " rows but " +
                        std::to_string(labels.size()) + " labels");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || labels[i] >= class_count)
            throw DataError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                            " outside [0, " + std::to_string(class_count) + ")");
    if (!features.allFinite()) throw DataError("dataset contains non-finite features");
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
    LabeledDataset out;
    out.class_count = class_count;
    out.features = gather_rows(features, indices);
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) out.labels.push_back(labels.at(i));
    return out;
}

Matrix LabeledDataset::label_column(std::span<const std::size_t> indices) const {
    Matrix y(static_cast<Index>(indices.size()), 1);
    for (std::size_t r = 0; r < indices.size(); ++r) y(static_cast<Index>(r), 0) = labels.at(indices[r]);
    return y;
}

Matrix LabeledDataset::label_column() const {
    Matrix y(static_cast<Index>(labels.size()), 1);
    for (std::size_t r = 0; r < labels.size(); ++r) y(static_cast<Index>(r), 0) = labels[r];
    return y;
}

Matrix gather_rows(const Matrix& source, std::span<const std::size_t> indices) {
    Matrix out(static_cast<Index>(indices.size()), source.cols());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (static_cast<Index>(indices[r]) >= source.rows()) throw RangeError("row index out of range");
        out.row(static_cast<Index>(r)) = source.row(static_cast<Index>(indices[r]));
    }
    return out;
}

Matrix one_hot(std::span<const int> labels, int class_count) {
    Matrix out = Matrix::Zero(static_cast<Index>(labels.size()), class_count);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= class_count)
            throw RangeError("label " + std::to_string(labels[i]) + " out of range for " +
                             std::to_string(class_count) + " classes");
        out(static_cast<Index>(i), labels[i]) = 1.0;
    }
    return out;
}

}  // namespace safecompress
