#include "safecompress/attacker.hpp"

#include <algorithm>
#include <cmath>

#include "safecompress/optimizer.hpp"

namespace safecompress {

std::string_view split_part_name(SplitPart part) {
    switch (part) {
        case SplitPart::KnownTrain: return "known_train";
        case SplitPart::KnownTest: return "known_test";
        case SplitPart::UnknownTrain: return "unknown_train";
        case SplitPart::UnknownTest: return "unknown_test";
    }
    return "?";
}

const LabeledDataset& MembershipSplit::part(SplitPart p) const {
    if (observer_) observer_(p);
    return parts_[static_cast<std::size_t>(p)];
}

const std::vector<std::size_t>& MembershipSplit::source_indices(SplitPart p) const {
    return indices_[static_cast<std::size_t>(p)];
}

MembershipSplit make_split(const LabeledDataset& train, const LabeledDataset& test, std::uint64_t seed) {
    if (train.empty() || test.empty()) throw DataError("make_split needs nonempty train and test data");
    MembershipSplit s;
    auto halve = [&](const LabeledDataset& src, std::uint64_t tag, SplitPart known, SplitPart unknown) {
        Rng rng(derive_seed(seed, {tag}));
        auto order = permutation(src.size(), rng);
        const std::size_t half = src.size() / 2;
        std::vector<std::size_t> k(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half));
        std::vector<std::size_t> u(order.begin() + static_cast<std::ptrdiff_t>(half), order.end());
        std::sort(k.begin(), k.end());
        std::sort(u.begin(), u.end());
        s.parts_[static_cast<std::size_t>(known)] = src.subset(k);
        s.parts_[static_cast<std::size_t>(unknown)] = src.subset(u);
        s.indices_[static_cast<std::size_t>(known)] = std::move(k);
        s.indices_[static_cast<std::size_t>(unknown)] = std::move(u);
    };
    halve(train, 1, SplitPart::KnownTrain, SplitPart::UnknownTrain);
    halve(test, 2, SplitPart::KnownTest, SplitPart::UnknownTest);
    return s;
}

std::string_view attack_kind_name(AttackKind kind) {
    return kind == AttackKind::BlackBox ? "black_box" : "white_box";
}

AttackFeatures AttackFeatures::subset(std::span<const std::size_t> idx) const {
    AttackFeatures out;
    out.probabilities = gather_rows(probabilities, idx);
    out.one_hot = gather_rows(one_hot, idx);
    if (loss.size()) out.loss = gather_rows(loss, idx);
    if (gradient.size()) out.gradient = gather_rows(gradient, idx);
    return out;
}

namespace {

LabeledDataset single(const TargetModel& target, const RowVector& sample, int label) {
    if (sample.size() != target.input_dim()) throw ShapeError("sample width does not match target input");
    if (label < 0 || label >= target.class_count())
        throw RangeError("label " + std::to_string(label) + " out of range for " +
                         std::to_string(target.class_count()) + " classes");
    LabeledDataset d;
    d.features = sample;
    d.labels = {label};
    d.class_count = target.class_count();
    return d;
}

void check_labels(const TargetModel& target, const LabeledDataset& data) {
    for (int y : data.labels)
        if (y < 0 || y >= target.class_count())
            throw RangeError("label " + std::to_string(y) + " out of range for " +
                             std::to_string(target.class_count()) + " classes");
}

}  // namespace

AttackFeatures extract_bbox_features(const TargetModel& target, const LabeledDataset& data) {
    check_labels(target, data);
    AttackFeatures f;
    f.probabilities = target.probabilities(data.features);
    f.one_hot = one_hot(data.labels, target.class_count());
    return f;
}

AttackFeatures extract_bbox_features(const TargetModel& target, const RowVector& sample, int label) {
    return extract_bbox_features(target, single(target, sample, label));
}

AttackFeatures extract_wbox_features(const TargetModel& target, const LabeledDataset& data) {
    check_labels(target, data);
    const auto act = target.forward_with_hidden(data.features);
    const Index n = act.logits.rows(), classes = act.logits.cols(), hidden = act.last_hidden.cols();
    const std::size_t last = target.layer_count() - 1;
    const BoolMatrix& mask = target.mask().layer(last);

    AttackFeatures f;
    f.probabilities = detail::row_softmax(act.logits);
    f.one_hot = one_hot(data.labels, target.class_count());
    const auto lse = detail::row_logsumexp(act.logits);
    f.loss.resize(n, 1);
    f.gradient.resize(n, classes * hidden);
    for (Index i = 0; i < n; ++i) {
        const int y = data.labels[static_cast<std::size_t>(i)];
        f.loss(i, 0) = lse(i) - act.logits(i, y);
        // d CE / d logits = p - onehot; d CE / d W = (p - onehot) h^T.
        const RowVector delta = f.probabilities.row(i) - f.one_hot.row(i);
        for (Index c = 0; c < classes; ++c)
            for (Index j = 0; j < hidden; ++j)
                f.gradient(i, c * hidden + j) = mask(c, j) ? delta(c) * act.last_hidden(i, j) : 0.0;
    }
    return f;
}

AttackFeatures extract_wbox_features(const TargetModel& target, const RowVector& sample, int label) {
    return extract_wbox_features(target, single(target, sample, label));
}

AttackFeatures extract_features(AttackKind kind, const TargetModel& target, const LabeledDataset& data) {
    return kind == AttackKind::BlackBox ? extract_bbox_features(target, data) : extract_wbox_features(target, data);
}

AttackerModel::AttackerModel(AttackKind kind, int class_count, Index gradient_dim, Index width, std::uint64_t seed)
    : kind_(kind), classes_(class_count), gradient_dim_(gradient_dim), width_(width) {
    if (class_count < 2) throw RangeError("attacker needs at least two target classes");
    if (width < 1) throw RangeError("attacker width must be positive");
    if (kind == AttackKind::WhiteBox && gradient_dim < 1) throw RangeError("white-box attacker needs a gradient width");
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto dense = [&](const std::string& name, Index in, Index out) {
        Matrix w(out, in);
        const double sd = std::sqrt(2.0 / static_cast<double>(in));
        for (Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng) * sd;
        params_.emplace(name + ".weight", Tensor<double>(std::move(w)));
        params_.emplace(name + ".bias", Tensor<double>({out}));
    };
    auto add_stream = [&](const std::string& name, Index in) {
        dense("attacker." + name + ".0", in, width);
        dense("attacker." + name + ".1", width, width);
    };
    add_stream("probability", class_count);
    add_stream("label", class_count);
    Index streams = 2;
    if (kind == AttackKind::WhiteBox) {
        add_stream("loss", 1);
        add_stream("gradient", gradient_dim);
        streams = 4;
    }
    dense("attacker.fusion.0", streams * width, width);
    dense("attacker.fusion.1", width, 1);
}

NodeId AttackerModel::stream(Graph<double>& g, const std::string& name, NodeId in) const {
    const std::string p = "attacker." + name;
    NodeId h = g.relu(g.affine(in, g.parameter(p + ".0.weight"), g.parameter(p + ".0.bias")));
    return g.relu(g.affine(h, g.parameter(p + ".1.weight"), g.parameter(p + ".1.bias")));
}

NodeId AttackerModel::build(Graph<double>& g, NodeId probabilities, NodeId one_hot, std::optional<NodeId> loss,
                            std::optional<NodeId> gradient) const {
    std::vector<NodeId> parts{stream(g, "probability", probabilities)};
    if (kind_ == AttackKind::WhiteBox) {
        if (!loss || !gradient) throw GraphStateError("white-box attacker needs loss and gradient inputs");
        parts.push_back(stream(g, "loss", *loss));
        parts.push_back(stream(g, "gradient", *gradient));
    }
    parts.push_back(stream(g, "label", one_hot));
    NodeId fused = g.concat_cols(std::move(parts));
    NodeId h = g.relu(g.affine(fused, g.parameter("attacker.fusion.0.weight"), g.parameter("attacker.fusion.0.bias")));
    return g.affine(h, g.parameter("attacker.fusion.1.weight"), g.parameter("attacker.fusion.1.bias"));
}

Graph<double>::Inputs AttackerModel::bind(const AttackFeatures& f) const {
    Graph<double>::Inputs in{{"a.probabilities", f.probabilities}, {"a.one_hot", f.one_hot}};
    if (kind_ == AttackKind::WhiteBox) {
        in.emplace("a.loss", f.loss);
        in.emplace("a.gradient", f.gradient);
    }
    return in;
}

NodeId AttackerModel::build_from_inputs(Graph<double>& g) const {
    const NodeId p = g.input("a.probabilities");
    const NodeId y = g.input("a.one_hot");
    if (kind_ == AttackKind::WhiteBox) return build(g, p, y, g.input("a.loss"), g.input("a.gradient"));
    return build(g, p, y);
}

Matrix AttackerModel::logits(const AttackFeatures& f) const {
    Graph<double> g;
    const NodeId out = build_from_inputs(g);
    return std::move(g.forward(out, bind(f), params_).values());
}

std::vector<double> AttackerModel::scores(const AttackFeatures& f) const {
    const Matrix z = logits(f);
    std::vector<double> out(static_cast<std::size_t>(z.rows()));
    for (Index i = 0; i < z.rows(); ++i) out[static_cast<std::size_t>(i)] = detail::sigmoid(z(i, 0));
    return out;
}

namespace {

void run_attacker_epochs(AttackerModel& attacker, const AttackFeatures& members, const AttackFeatures& nonmembers,
                         long epochs, const AttackerTrainConfig& config, std::uint64_t seed,
                         const BatchObserver& on_batch) {
    if (members.rows() == 0 || nonmembers.rows() == 0)
        throw DataError("attacker training needs nonempty member and non-member sets");
    if (epochs <= 0) return;
    const auto nm = static_cast<std::size_t>(members.rows());
    const auto nn = static_cast<std::size_t>(nonmembers.rows());
    const std::size_t half = std::min({std::max<std::size_t>(1, static_cast<std::size_t>(config.batch_size) / 2), nm, nn});
    const std::size_t per_epoch = (std::max(nm, nn) + half - 1) / half;

    MinibatchSampler member_batches(nm, static_cast<Index>(half), derive_seed(seed, {1}));
    MinibatchSampler nonmember_batches(nn, static_cast<Index>(half), derive_seed(seed, {2}));
    Optimizer<double> opt(OptimizerConfig::adam(config.learning_rate));

    Graph<double> g;
    const NodeId logit = attacker.build_from_inputs(g);
    const NodeId loss = g.bce_with_logits(logit, g.input("t"));

    Matrix targets(static_cast<Index>(2 * half), 1);
    targets.topRows(static_cast<Index>(half)).setOnes();
    targets.bottomRows(static_cast<Index>(half)).setZero();

    for (long e = 0; e < epochs; ++e) {
        for (std::size_t b = 0; b < per_epoch; ++b) {
            const AttackFeatures fm = members.subset(member_batches.next());
            const AttackFeatures fn = nonmembers.subset(nonmember_batches.next());
            AttackFeatures batch;
            auto stack = [](const Matrix& a, const Matrix& c) {
                Matrix m(a.rows() + c.rows(), a.cols());
                m << a, c;
                return m;
            };
            batch.probabilities = stack(fm.probabilities, fn.probabilities);
            batch.one_hot = stack(fm.one_hot, fn.one_hot);
            if (attacker.kind() == AttackKind::WhiteBox) {
                batch.loss = stack(fm.loss, fn.loss);
                batch.gradient = stack(fm.gradient, fn.gradient);
            }
            if (on_batch) on_batch(static_cast<std::size_t>(fm.rows()), static_cast<std::size_t>(fn.rows()));
            auto inputs = attacker.bind(batch);
            inputs.emplace("t", targets);
            g.forward(loss, inputs, attacker.params());
            g.backward(loss, attacker.params());
            opt.step(attacker.params());
        }
    }
}

Index gradient_width(const TargetModel& target) {
    return static_cast<Index>(target.class_count()) * target.last_hidden_dim();
}

}  // namespace

AttackerModel train_attacker(AttackKind kind, const TargetModel& target, const MembershipSplit& split,
                             const AttackerTrainConfig& config, std::uint64_t seed, const BatchObserver& on_batch) {
    const LabeledDataset& members = split.known_train();
    const LabeledDataset& nonmembers = split.known_test();
    if (members.empty() || nonmembers.empty()) throw DataError("train_attacker: a known half is empty");
    AttackerModel attacker(kind, target.class_count(), gradient_width(target), config.width, derive_seed(seed, {7}));
    run_attacker_epochs(attacker, extract_features(kind, target, members), extract_features(kind, target, nonmembers),
                        config.epochs, config, derive_seed(seed, {8}), on_batch);
    return attacker;
}

AttackerModel finetune_attacker(const AttackerModel& attacker, const TargetModel& candidate,
                                const MembershipSplit& split, long epochs, const AttackerTrainConfig& config,
                                std::uint64_t seed, const BatchObserver& on_batch) {
    const LabeledDataset& members = split.known_train();
    const LabeledDataset& nonmembers = split.known_test();
    if (members.empty() || nonmembers.empty()) throw DataError("finetune_attacker: a known half is empty");
    AttackerModel copy = attacker;
    if (epochs <= 0) return copy;
    run_attacker_epochs(copy, extract_features(copy.kind(), candidate, members),
                        extract_features(copy.kind(), candidate, nonmembers), epochs, config, seed, on_batch);
    return copy;
}

double mia_gain_from_scores(std::span<const double> member_scores, std::span<const double> nonmember_scores) {
    auto clamp = [](double f) { return std::clamp(f, kGainClamp, 1.0 - kGainClamp); };
    double gain = 0.0;
    for (double f : member_scores) gain += std::log(clamp(f));
    for (double f : nonmember_scores) gain += std::log(1.0 - clamp(f));
    return gain;
}

double mia_gain(const AttackerModel& attacker, const TargetModel& target, const LabeledDataset& members,
                const LabeledDataset& nonmembers) {
    if (members.empty() || nonmembers.empty()) throw DataError("mia_gain needs nonempty member and non-member sets");
    const auto sm = attacker.scores(extract_features(attacker.kind(), target, members));
    const auto sn = attacker.scores(extract_features(attacker.kind(), target, nonmembers));
    return mia_gain_from_scores(sm, sn);
}

double mia_accuracy_from_scores(std::span<const double> member_scores, std::span<const double> nonmember_scores) {
    if (member_scores.size() != nonmember_scores.size() || member_scores.empty())
        throw DataError("balanced evaluation needs equal, nonzero member and non-member counts");
    std::size_t correct = 0;
    for (double f : member_scores) correct += f >= 0.5;
    for (double f : nonmember_scores) correct += f < 0.5;
    return static_cast<double>(correct) / static_cast<double>(2 * member_scores.size());
}

BalancedEvalIndices balanced_eval_indices(std::size_t unknown_members, std::size_t unknown_nonmembers,
                                          std::uint64_t seed) {
    if (unknown_members == 0 || unknown_nonmembers == 0) throw DataError("mia_accuracy: an unknown half is empty");
    const std::size_t n = std::min(unknown_members, unknown_nonmembers);
    Rng rng(seed);
    auto pick = [&](std::size_t total) {
        if (total == n) return iota_indices(n);
        auto order = permutation(total, rng);
        order.resize(n);
        std::sort(order.begin(), order.end());
        return order;
    };
    BalancedEvalIndices out;
    out.members = pick(unknown_members);
    out.nonmembers = pick(unknown_nonmembers);
    return out;
}

double mia_accuracy(const AttackerModel& attacker, const TargetModel& target, const MembershipSplit& split,
                    std::uint64_t seed) {
    const LabeledDataset& um = split.unknown_train();
    const LabeledDataset& un = split.unknown_test();
    const auto idx = balanced_eval_indices(um.size(), un.size(), seed);
    const auto sm = attacker.scores(extract_features(attacker.kind(), target, um.subset(idx.members)));
    const auto sn = attacker.scores(extract_features(attacker.kind(), target, un.subset(idx.nonmembers)));
    return mia_accuracy_from_scores(sm, sn);
}

}  // namespace safecompress
