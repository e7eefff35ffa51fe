#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "safecompress/autograd.hpp"
#include "safecompress/dataset.hpp"
#include "safecompress/target_model.hpp"

namespace safecompress {

enum class SplitPart { KnownTrain, KnownTest, UnknownTrain, UnknownTest };

std::string_view split_part_name(SplitPart part);

/// The four disjoint views an attacker simulation works with. The attacker
/// "knows" half of the target's training data (members) and half of the
/// held-out data (non-members); the unknown halves are reserved for
/// measuring attack accuracy.
class MembershipSplit {
public:
    MembershipSplit() = default;

    const LabeledDataset& part(SplitPart p) const;
    const LabeledDataset& known_train() const { return part(SplitPart::KnownTrain); }
    const LabeledDataset& known_test() const { return part(SplitPart::KnownTest); }
    const LabeledDataset& unknown_train() const { return part(SplitPart::UnknownTrain); }
    const LabeledDataset& unknown_test() const { return part(SplitPart::UnknownTest); }

    /// Row indices of a part into its source dataset (train or test).
    const std::vector<std::size_t>& source_indices(SplitPart p) const;

    /// Called with the part on every access through part(); used to audit
    /// which halves a procedure reads.
    void set_access_observer(std::function<void(SplitPart)> observer) { observer_ = std::move(observer); }

    friend MembershipSplit make_split(const LabeledDataset& train, const LabeledDataset& test, std::uint64_t seed);

private:
    std::array<LabeledDataset, 4> parts_;
    std::array<std::vector<std::size_t>, 4> indices_;
    std::function<void(SplitPart)> observer_;
};

/// Seeded 50/50 partition of each source. Odd counts put the extra row in the
/// unknown half.
MembershipSplit make_split(const LabeledDataset& train, const LabeledDataset& test, std::uint64_t seed);

enum class AttackKind { BlackBox, WhiteBox };

std::string_view attack_kind_name(AttackKind kind);

/// Per-sample attacker inputs, one row per sample. `loss` and `gradient` are
/// only filled for white-box features.
struct AttackFeatures {
    Matrix probabilities;
    Matrix one_hot;
    Matrix loss;
    Matrix gradient;

    Index rows() const noexcept { return probabilities.rows(); }
    AttackFeatures subset(std::span<const std::size_t> idx) const;
};

/// Softmax output and one-hot label for every row of `data`.
AttackFeatures extract_bbox_features(const TargetModel& target, const LabeledDataset& data);
AttackFeatures extract_bbox_features(const TargetModel& target, const RowVector& sample, int label);

/// Adds the per-sample cross-entropy and the flattened gradient of that loss
/// w.r.t. the final affine layer's weights. The gradient is restricted to the
/// active positions of that layer (inactive weights are not parameters of the
/// compressed model), flattened row-major as (classes x last_hidden).
AttackFeatures extract_wbox_features(const TargetModel& target, const LabeledDataset& data);
AttackFeatures extract_wbox_features(const TargetModel& target, const RowVector& sample, int label);

AttackFeatures extract_features(AttackKind kind, const TargetModel& target, const LabeledDataset& data);

/// Stream-and-fusion membership classifier.
///
/// Black-box: probability and label streams. White-box: probability, loss,
/// gradient and label streams. Each stream is affine-ReLU-affine-ReLU of the
/// configured width; the fusion head is affine-ReLU-affine to one logit.
class AttackerModel {
public:
    AttackerModel() = default;
    AttackerModel(AttackKind kind, int class_count, Index gradient_dim, Index width, std::uint64_t seed);

    AttackKind kind() const noexcept { return kind_; }
    int class_count() const noexcept { return classes_; }
    Index gradient_dim() const noexcept { return gradient_dim_; }
    Index width() const noexcept { return width_; }

    ParameterMap& params() noexcept { return params_; }
    const ParameterMap& params() const noexcept { return params_; }

    /// Appends the network to `g` reading the named feature inputs; returns
    /// the (n, 1) membership logit node. `probabilities` may be any node, so
    /// the attacker can sit on top of a differentiable target output.
    NodeId build(Graph<double>& g, NodeId probabilities, NodeId one_hot, std::optional<NodeId> loss = {},
                 std::optional<NodeId> gradient = {}) const;

    /// Binds feature matrices to the input names used by build_from_inputs.
    Graph<double>::Inputs bind(const AttackFeatures& f) const;
    NodeId build_from_inputs(Graph<double>& g) const;

    Matrix logits(const AttackFeatures& f) const;
    /// Membership probabilities in (0, 1), one per row.
    std::vector<double> scores(const AttackFeatures& f) const;

private:
    NodeId stream(Graph<double>& g, const std::string& name, NodeId in) const;

    AttackKind kind_ = AttackKind::BlackBox;
    int classes_ = 0;
    Index gradient_dim_ = 0;
    Index width_ = 64;
    ParameterMap params_;
};

struct AttackerTrainConfig {
    long epochs = 100;
    long finetune_epochs = 5;
    Index batch_size = 128;
    double learning_rate = 1e-3;
    Index width = 64;

    bool operator==(const AttackerTrainConfig&) const = default;
};

/// Called once per attacker minibatch with (members, non-members) counts.
using BatchObserver = std::function<void(std::size_t, std::size_t)>;

/// Trains an attacker against `target` on the known halves only (members =
/// known_train, non-members = known_test) with Adam, minimising binary
/// cross-entropy, i.e. maximising the membership gain. Every minibatch holds
/// equally many members and non-members; the smaller side is cycled.
AttackerModel train_attacker(AttackKind kind, const TargetModel& target, const MembershipSplit& split,
                             const AttackerTrainConfig& config, std::uint64_t seed,
                             const BatchObserver& on_batch = {});

/// Independent copy of `attacker` adapted to `candidate` for `epochs` further
/// epochs on the known halves, with a fresh optimiser.
AttackerModel finetune_attacker(const AttackerModel& attacker, const TargetModel& candidate,
                                const MembershipSplit& split, long epochs, const AttackerTrainConfig& config,
                                std::uint64_t seed, const BatchObserver& on_batch = {});

/// Lower clamp for attacker probabilities inside the gain's logarithms.
inline constexpr double kGainClamp = 1e-12;

/// sum log f over members + sum log(1 - f) over non-members, natural log,
/// with f clamped to [1e-12, 1 - 1e-12]. Always <= 0.
double mia_gain_from_scores(std::span<const double> member_scores, std::span<const double> nonmember_scores);

double mia_gain(const AttackerModel& attacker, const TargetModel& target, const LabeledDataset& members,
                const LabeledDataset& nonmembers);

/// Threshold-0.5 accuracy (score >= 0.5 means "member") over equally many
/// members and non-members. Both spans must have the same length.
double mia_accuracy_from_scores(std::span<const double> member_scores, std::span<const double> nonmember_scores);

/// Rows used for the balanced evaluation: all of the smaller unknown half
/// plus an equal-size seeded subsample of the larger one.
struct BalancedEvalIndices {
    std::vector<std::size_t> members;     // into unknown_train
    std::vector<std::size_t> nonmembers;  // into unknown_test
};
BalancedEvalIndices balanced_eval_indices(std::size_t unknown_members, std::size_t unknown_nonmembers,
                                          std::uint64_t seed);

/// Attack accuracy on the unknown halves, balanced as above.
double mia_accuracy(const AttackerModel& attacker, const TargetModel& target, const MembershipSplit& split,
                    std::uint64_t seed);

}  // namespace safecompress
