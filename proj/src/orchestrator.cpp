#include "safecompress/orchestrator.hpp"

#include <chrono>
#include <algorithm>
#include <cmath>
#include <memory>

namespace safecompress {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Seed stream tags.
enum : std::uint64_t {
    kInit = 10,
    kSplit,
    kTrain,
    kGrowth,
    kAttacker,
    kUpdate,
    kFineTune,
    kAttackerFineTune,
    kEval,
    kAdversary,
    kFinal,
};

Matrix stack_rows(const Matrix& a, const Matrix& b) {
    Matrix m(a.rows() + b.rows(), a.cols());
    m << a, b;
    return m;
}

void train_rounds_adversarial(TargetModel& model, AttackerModel& adversary, Optimizer<double>& adversary_optimizer,
                              const LabeledDataset& train, const LabeledDataset& reference, const TrainConfig& config,
                              double beta, std::uint64_t seed) {
    if (train.empty() || reference.empty()) throw DataError("adversarial training needs members and a reference set");
    MinibatchSampler members(train.size(), config.batch_size, derive_seed(seed, {1}));
    MinibatchSampler nonmembers(reference.size(), config.batch_size, derive_seed(seed, {2}));
    Optimizer<double> opt(config.optimizer);
    for (long it = 0; it < config.iterations; ++it) {
        const auto im = members.next();
        const auto in = nonmembers.next();
        const Matrix x = stack_rows(gather_rows(train.features, im), gather_rows(reference.features, in));
        std::vector<int> labels;
        const std::size_t n = im.size() + in.size();
        auto flags = std::make_unique<bool[]>(n);
        for (auto i : im) labels.push_back(train.labels[i]);
        for (auto i : in) labels.push_back(reference.labels[i]);
        for (std::size_t i = 0; i < im.size(); ++i) flags[i] = true;
        adversarial_train_step(model, opt, adversary, adversary_optimizer, x, labels,
                               std::span<const bool>(flags.get(), n), beta);
    }
}

void audit_candidate(const TargetModel& parent, const TargetModel& candidate, const RunConfig& config) {
    if (candidate.mask().active_count() != parent.mask().active_count())
        throw Error("sparse update changed the active count from " + std::to_string(parent.mask().active_count()) +
                    " to " + std::to_string(candidate.mask().active_count()));
    for (std::size_t k = 0; k < parent.layer_count(); ++k)
        if (candidate.mask().active_count(k) != parent.mask().active_count(k))
            throw Error("sparse update changed the active count of layer " + std::to_string(k));
    if (candidate.mask().active_fraction() > config.omega)
        throw Error("candidate density " + std::to_string(candidate.mask().active_fraction()) + " exceeds omega");
    if (candidate.mask_violations() != 0) throw Error("candidate has nonzero weights at inactive positions");
}

// Keeps the floor(omega * total) largest |w| across all layers; ties go to the
// earlier layer and lower flat index.
Index global_magnitude_prune(std::vector<BoolMatrix>& layers, TargetModel& model, double omega) {
    struct Slot {
        double magnitude;
        std::size_t layer;
        Index flat;
    };
    std::vector<Slot> active;
    Index total = 0;
    for (std::size_t k = 0; k < layers.size(); ++k) {
        total += layers[k].size();
        for (Index i = 0; i < layers[k].size(); ++i)
            if (layers[k].data()[i]) active.push_back({std::abs(model.weight(k).data()[i]), k, i});
    }
    const Index keep = static_cast<Index>(std::floor(omega * static_cast<double>(total) + 1e-9));
    const Index drop = std::max<Index>(0, static_cast<Index>(active.size()) - keep);
    std::stable_sort(active.begin(), active.end(), [](const Slot& a, const Slot& b) { return a.magnitude < b.magnitude; });
    for (Index j = 0; j < drop; ++j) {
        const Slot& s = active[static_cast<std::size_t>(j)];
        layers[s.layer].data()[s.flat] = false;
        model.weight(s.layer).data()[s.flat] = 0.0;
    }
    return drop;
}

}  // namespace

void RunConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& msg) { throw ConfigError("$." + field, msg); };
    if (!(omega > 0.0 && omega <= 1.0)) fail("omega", "must lie in (0, 1]");
    if (!(lambda > 0.0)) fail("lambda", "must be positive");
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha", "must lie in [0, 1]");
    if (!(beta >= 0.0)) fail("beta", "must be non-negative");
    if (hidden_layers.empty()) fail("hidden_layers", "needs at least one hidden layer");
    for (Index h : hidden_layers)
        if (h < 1) fail("hidden_layers", "widths must be positive");
    if (iterations_per_round < 1) fail("iterations_per_round", "must be >= 1");
    if (total_rounds < 1) fail("total_rounds", "must be >= 1");
    if (batch_size < 1) fail("batch_size", "must be >= 1");
    if (!(learning_rate > 0.0)) fail("learning_rate", "must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum", "must lie in [0, 1)");
    if (!(prune_fraction >= 0.0 && prune_fraction <= 1.0)) fail("prune_fraction", "must lie in [0, 1]");
    if (!(threshold >= 0.0)) fail("threshold", "must be non-negative");
    if (growth_batch_size < 1) fail("growth_batch_size", "must be >= 1");
    if (fine_tune.epochs < 0) fail("fine_tune.epochs", "must be >= 0");
    if (fine_tune.batch_size < 1) fail("fine_tune.batch_size", "must be >= 1");
    if (!(fine_tune.optimizer.learning_rate > 0.0)) fail("fine_tune.learning_rate", "must be positive");
    if (!(fine_tune.optimizer.weight_decay >= 0.0)) fail("fine_tune.weight_decay", "must be non-negative");
    if (attacker.epochs < 1) fail("attacker.epochs", "must be >= 1");
    if (attacker.finetune_epochs < 0) fail("attacker.finetune_epochs", "must be >= 0");
    if (attacker.batch_size < 2) fail("attacker.batch_size", "must be >= 2");
    if (!(attacker.learning_rate > 0.0)) fail("attacker.learning_rate", "must be positive");
    if (attacker.width < 1) fail("attacker.width", "must be >= 1");
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.iterations = iterations_per_round;
    t.batch_size = batch_size;
    t.optimizer = OptimizerConfig::sgd(learning_rate, momentum);
    return t;
}

double RunConfig::prune_fraction_at(long round) const {
    return cosine_decay ? cosine_prune_fraction(prune_fraction, round, total_rounds) : prune_fraction;
}

std::vector<Index> RunConfig::layer_dims(Index input_dim, int class_count) const {
    std::vector<Index> dims{input_dim};
    dims.insert(dims.end(), hidden_layers.begin(), hidden_layers.end());
    dims.push_back(class_count);
    return dims;
}

std::vector<std::string> RunTrace::selected_strategies() const {
    std::vector<std::string> out;
    for (const auto& r : rounds) {
        const auto& s = r.selected_report().strategy;
        out.push_back(s ? s->name() : "none");
    }
    return out;
}

MembershipSplit run_split(const RunConfig& config, const LabeledDataset& train, const LabeledDataset& test) {
    return make_split(train, test, derive_seed(config.seed, {kSplit}));
}

std::uint64_t final_eval_seed(const RunConfig& config) { return derive_seed(config.seed, {kFinal}); }

std::vector<AttackKind> attack_kinds(SelectionMode mode) {
    switch (mode) {
        case SelectionMode::BlackBox: return {AttackKind::BlackBox};
        case SelectionMode::WhiteBox: return {AttackKind::WhiteBox};
        case SelectionMode::Multi: return {AttackKind::BlackBox, AttackKind::WhiteBox};
    }
    return {};
}

namespace {

void set_mia(EvalReport& r, AttackKind kind, double pct) {
    (kind == AttackKind::BlackBox ? r.mia_acc_b_pct : r.mia_acc_w_pct) = pct;
}

}  // namespace

EvalReport evaluate_model(const TargetModel& model, const LabeledDataset& test, const MembershipSplit& split,
                          const RunConfig& config, std::uint64_t seed) {
    EvalReport r;
    r.candidate_id = -1;
    r.task_acc_pct = 100.0 * task_accuracy(model, test);
    r.sparsity = model.mask().active_fraction();
    for (AttackKind kind : attack_kinds(config.mode)) {
        const auto k = static_cast<std::uint64_t>(kind);
        const AttackerModel attacker = train_attacker(kind, model, split, config.attacker, derive_seed(seed, {1, k}));
        set_mia(r, kind, 100.0 * mia_accuracy(attacker, model, split, derive_seed(seed, {2})));
    }
    score_report(r, config.mode, config.lambda, config.alpha);
    return r;
}

void adversarial_train_step(TargetModel& model, Optimizer<double>& target_optimizer, AttackerModel& adversary,
                            Optimizer<double>& adversary_optimizer, const Matrix& features, std::span<const int> labels,
                            std::span<const bool> member_flags, double beta) {
    const auto n = static_cast<std::size_t>(features.rows());
    if (member_flags.size() != n) throw RangeError("adversarial step: membership flags missing for the batch");
    if (labels.size() != n) throw RangeError("adversarial step: one label per row required");
    if (!(beta >= 0.0)) throw RangeError("adversarial step: beta must be non-negative");
    if (adversary.kind() != AttackKind::BlackBox) throw RangeError("adversarial step: the adversary is black-box");

    std::vector<std::size_t> member_rows;
    Matrix flags(static_cast<Index>(n), 1);
    for (std::size_t i = 0; i < n; ++i) {
        flags(static_cast<Index>(i), 0) = member_flags[i] ? 1.0 : 0.0;
        if (member_flags[i]) member_rows.push_back(i);
    }
    if (member_rows.empty()) throw RangeError("adversarial step: batch holds no members");
    const Matrix onehot = one_hot(labels, model.class_count());

    // Inner ascent on the adversary's gain (descent on its cross-entropy).
    {
        AttackFeatures f;
        f.probabilities = model.probabilities(features);
        f.one_hot = onehot;
        Graph<double> g;
        const NodeId loss = g.bce_with_logits(adversary.build_from_inputs(g), g.input("t"));
        auto inputs = adversary.bind(f);
        inputs.emplace("t", flags);
        g.forward(loss, inputs, adversary.params());
        g.backward(loss, adversary.params());
        adversary_optimizer.step(adversary.params());
    }

    // Target descent on CE(members) + beta * mean gain.
    ParameterMap combined = model.params();
    for (const auto& [name, t] : adversary.params()) combined.emplace(name, t);

    Matrix member_labels(static_cast<Index>(member_rows.size()), 1);
    for (std::size_t r = 0; r < member_rows.size(); ++r)
        member_labels(static_cast<Index>(r), 0) = labels[member_rows[r]];

    Graph<double> g;
    const NodeId ce = g.cross_entropy(model.build(g, g.input("x_member")), g.input("y_member"));
    const NodeId probs = g.softmax(model.build(g, g.input("x_all")));
    const NodeId z = adversary.build(g, probs, g.input("onehot_all"));
    const NodeId gain = g.scale(g.bce_with_logits(z, g.input("flags")), -1.0);
    const NodeId total = g.add(ce, g.scale(gain, beta));
    g.forward(total,
              {{"x_member", gather_rows(features, member_rows)},
               {"y_member", member_labels},
               {"x_all", features},
               {"onehot_all", onehot},
               {"flags", flags}},
              combined);
    g.backward(total, combined);
    for (auto& [name, t] : model.params()) t.set_grad(combined.at(name).grad());
    target_optimizer.step(model.params(), model.mask_bindings());
    model.advance_iterations(1);
}

RunResult run_safecompress(const RunConfig& config, const LabeledDataset& train, const LabeledDataset& test) {
    config.validate();
    if (train.empty() || test.empty()) throw DataError("run_safecompress needs nonempty train and test data");
    train.validate();
    test.validate();

    const std::uint64_t seed = config.seed;
    const auto dims = config.layer_dims(train.feature_count(), train.class_count);
    TargetModel model = build_mlp(dims, config.omega, derive_seed(seed, {kInit}));
    const MembershipSplit split = run_split(config, train, test);
    const std::vector<AttackKind> kinds = attack_kinds(config.mode);

    std::optional<AttackerModel> adversary;
    Optimizer<double> adversary_optimizer(OptimizerConfig::adam(config.attacker.learning_rate));
    if (config.adversarial_training)
        adversary.emplace(AttackKind::BlackBox, model.class_count(), 0, config.attacker.width,
                          derive_seed(seed, {kAdversary}));

    RunTrace trace;
    trace.mode = config.mode;
    trace.initial_mask_hash = model.mask().hash();
    for (long round = 0; round < config.total_rounds; ++round) {
        try {
            const auto r = static_cast<std::uint64_t>(round);
            RoundRecord rec;
            rec.round = round;
            rec.prune_fraction = config.prune_fraction_at(round);

            auto t0 = Clock::now();
            if (adversary)
                train_rounds_adversarial(model, *adversary, adversary_optimizer, train, split.known_test(),
                                         config.train_config(), config.beta, derive_seed(seed, {kTrain, r}));
            else
                train_rounds(model, train, config.train_config(), derive_seed(seed, {kTrain, r}));
            rec.seconds.training = seconds_since(t0);
            rec.active_before = model.mask().active_count();

            t0 = Clock::now();
            Rng growth_rng(derive_seed(seed, {kGrowth, r}));
            auto growth_rows = permutation(train.size(), growth_rng);
            growth_rows.resize(std::min<std::size_t>(growth_rows.size(), static_cast<std::size_t>(config.growth_batch_size)));
            const auto dense_grads = dense_weight_gradients(model, gather_rows(train.features, growth_rows),
                                                            train.label_column(growth_rows));
            std::vector<TargetModel> candidates;
            for (const auto& s : UpdateStrategy::all()) {
                const auto i = static_cast<std::uint64_t>(s.order());
                TargetModel c = sparse_update(model, s, rec.prune_fraction, config.threshold, dense_grads,
                                              derive_seed(seed, {kUpdate, r, i}));
                fine_tune(c, train, config.fine_tune, derive_seed(seed, {kFineTune, r, i}));
                audit_candidate(model, c, config);
                candidates.push_back(std::move(c));
            }
            rec.seconds.sparse_update = seconds_since(t0);

            // The safety-testing attackers only read target outputs; nothing
            // flows back into the candidates.
            t0 = Clock::now();
            std::vector<AttackerModel> parents;
            for (AttackKind kind : kinds)
                parents.push_back(train_attacker(kind, model, split, config.attacker,
                                                 derive_seed(seed, {kAttacker, r, static_cast<std::uint64_t>(kind)})));
            std::vector<std::vector<AttackerModel>> tuned(candidates.size());
            for (std::size_t c = 0; c < candidates.size(); ++c)
                for (std::size_t a = 0; a < kinds.size(); ++a)
                    tuned[c].push_back(finetune_attacker(
                        parents[a], candidates[c], split, config.attacker.finetune_epochs, config.attacker,
                        derive_seed(seed, {kAttackerFineTune, r, c, static_cast<std::uint64_t>(kinds[a])})));
            rec.seconds.attack_simulation = seconds_since(t0);

            t0 = Clock::now();
            for (std::size_t c = 0; c < candidates.size(); ++c) {
                EvalReport rep;
                rep.candidate_id = static_cast<int>(c);
                rep.strategy = UpdateStrategy::all()[c];
                rep.task_acc_pct = 100.0 * task_accuracy(candidates[c], test);
                rep.sparsity = candidates[c].mask().active_fraction();
                for (std::size_t a = 0; a < kinds.size(); ++a)
                    set_mia(rep, kinds[a], 100.0 * mia_accuracy(tuned[c][a], candidates[c], split,
                                                                 derive_seed(seed, {kEval, r})));
                score_report(rep, config.mode, config.lambda, config.alpha);
                rec.candidates.push_back(rep);
            }
            rec.selected = select_best_index(rec.candidates);
            model = std::move(candidates[rec.selected]);
            rec.seconds.evaluation = seconds_since(t0);

            rec.active_after = model.mask().active_count();
            rec.sparsity = model.mask().active_fraction();
            rec.audit_passed = rec.active_after == rec.active_before && rec.sparsity <= config.omega &&
                               model.mask_violations() == 0;
            if (!rec.audit_passed) throw Error("end-of-round audit failed");
            trace.rounds.push_back(std::move(rec));
        } catch (const RunError&) {
            throw;
        } catch (const std::exception& e) {
            throw RunError(round, e.what());
        }
    }

    trace.final_report = evaluate_model(model, test, split, config, final_eval_seed(config));
    trace.final_mask_hash = model.mask().hash();
    trace.final_sparsity = model.mask().active_fraction();
    return {std::move(model), std::move(trace)};
}

TargetModel dense_pretrain(const RunConfig& config, const LabeledDataset& train) {
    TargetModel dense = build_mlp(config.layer_dims(train.feature_count(), train.class_count), 1.0,
                                  derive_seed(config.seed, {kInit}));
    TrainConfig pretrain = config.train_config();
    pretrain.iterations = config.iterations_per_round * config.total_rounds;
    train_rounds(dense, train, pretrain, derive_seed(config.seed, {kTrain}));
    return dense;
}

RunResult run_baseline_prune_finetune(const RunConfig& config, const LabeledDataset& train,
                                      const LabeledDataset& test) {
    config.validate();
    if (train.empty() || test.empty()) throw DataError("baseline needs nonempty train and test data");
    train.validate();
    test.validate();

    const MembershipSplit split = run_split(config, train, test);
    TargetModel dense = dense_pretrain(config, train);

    std::vector<BoolMatrix> layers = dense.mask().layers();
    const Index pruned = global_magnitude_prune(layers, dense, config.omega);
    TargetModel model(dense.layer_dims(), dense.params(), SparseMask(std::move(layers), config.omega));
    model.set_iterations(dense.iterations_done());
    if (pruned > 0) fine_tune(model, train, config.fine_tune, derive_seed(config.seed, {kFineTune}));

    RunTrace trace;
    trace.mode = config.mode;
    trace.initial_mask_hash = dense.mask().hash();
    trace.final_report = evaluate_model(model, test, split, config, final_eval_seed(config));
    trace.final_mask_hash = model.mask().hash();
    trace.final_sparsity = model.mask().active_fraction();
    return {std::move(model), std::move(trace)};
}

}  // namespace safecompress
