#include <doctest.h>

#include <functional>
#include <set>

#include "safecompress/experiment.hpp"
#include "safecompress/orchestrator.hpp"
#include "support.hpp"

using namespace safecompress;

namespace {

std::pair<LabeledDataset, LabeledDataset> tiny_data(std::uint64_t seed = 4) {
    SyntheticSpec s;
    s.train_size = 80;
    s.test_size = 80;
    s.features = 6;
    s.classes = 3;
    s.separation = 0.8;
    return generate_synthetic(s, seed);
}

RunConfig tiny_config(SelectionMode mode = SelectionMode::BlackBox) {
    RunConfig c;
    c.mode = mode;
    c.omega = 0.3;
    c.hidden_layers = {16};
    c.iterations_per_round = 20;
    c.total_rounds = 2;
    c.batch_size = 16;
    c.growth_batch_size = 32;
    c.fine_tune.epochs = 1;
    c.fine_tune.batch_size = 32;
    c.attacker.epochs = 3;
    c.attacker.finetune_epochs = 1;
    c.attacker.batch_size = 16;
    c.attacker.width = 8;
    c.seed = 21;
    return c;
}

bool same_weights(const TargetModel& a, const TargetModel& b) {
    for (std::size_t k = 0; k < a.layer_count(); ++k) {
        if (!(a.weight(k).array() == b.weight(k).array()).all()) return false;
        if (!(a.bias(k).array() == b.bias(k).array()).all()) return false;
    }
    return true;
}

struct MixedBatch {
    Matrix x;
    std::vector<int> labels;
    std::unique_ptr<bool[]> flags;
    std::vector<std::size_t> member_rows, nonmember_rows;
    LabeledDataset all;
};

MixedBatch mixed_batch(const LabeledDataset& members, const LabeledDataset& nonmembers, std::size_t each) {
    MixedBatch b;
    const auto n = static_cast<Index>(2 * each);
    b.x.resize(n, members.features.cols());
    b.flags = std::make_unique<bool[]>(2 * each);
    for (std::size_t i = 0; i < 2 * each; ++i) {
        const bool member = i % 2 == 0;
        const LabeledDataset& src = member ? members : nonmembers;
        b.x.row(static_cast<Index>(i)) = src.features.row(static_cast<Index>(i / 2));
        b.labels.push_back(src.labels[i / 2]);
        b.flags[i] = member;
        (member ? b.member_rows : b.nonmember_rows).push_back(i);
    }
    b.all.features = b.x;
    b.all.labels = b.labels;
    b.all.class_count = members.class_count;
    return b;
}

}  // namespace

TEST_SUITE("orchestrator") {

TEST_CASE("validation names the offending field") {
    const std::vector<std::pair<std::string, std::function<void(RunConfig&)>>> cases{
        {"$.omega", [](RunConfig& c) { c.omega = 1.5; }},
        {"$.omega", [](RunConfig& c) { c.omega = 0.0; }},
        {"$.lambda", [](RunConfig& c) { c.lambda = 0.0; }},
        {"$.alpha", [](RunConfig& c) { c.alpha = -0.1; }},
        {"$.beta", [](RunConfig& c) { c.beta = -1.0; }},
        {"$.hidden_layers", [](RunConfig& c) { c.hidden_layers.clear(); }},
        {"$.iterations_per_round", [](RunConfig& c) { c.iterations_per_round = 0; }},
        {"$.total_rounds", [](RunConfig& c) { c.total_rounds = 0; }},
        {"$.prune_fraction", [](RunConfig& c) { c.prune_fraction = 1.2; }},
        {"$.fine_tune.epochs", [](RunConfig& c) { c.fine_tune.epochs = -1; }},
        {"$.attacker.batch_size", [](RunConfig& c) { c.attacker.batch_size = 1; }},
    };
    CHECK_NOTHROW(tiny_config().validate());
    for (const auto& [path, mutate] : cases) {
        RunConfig c = tiny_config();
        mutate(c);
        try {
            c.validate();
            FAIL("no error for " << path);
        } catch (const ConfigError& e) {
            CHECK(e.path() == path);
        }
    }
}

TEST_CASE("a zero prune fraction keeps the initial mask") {
    const auto [train, test] = tiny_data();
    RunConfig c = tiny_config();
    c.total_rounds = 1;
    c.prune_fraction = 0.0;
    const RunResult r = run_safecompress(c, train, test);
    CHECK(r.trace.final_mask_hash == r.trace.initial_mask_hash);
    CHECK(r.trace.rounds.size() == 1);
}

TEST_CASE("rounds evaluate four audited candidates and keep the best") {
    const auto [train, test] = tiny_data();
    const RunConfig c = tiny_config();
    const RunResult r = run_safecompress(c, train, test);
    REQUIRE(r.trace.rounds.size() == 2);
    for (const auto& round : r.trace.rounds) {
        REQUIRE(round.candidates.size() == 4);
        std::set<int> orders;
        for (const auto& cand : round.candidates) {
            orders.insert(cand.strategy->order());
            CHECK(cand.score <= round.selected_report().score);
            CHECK(cand.sparsity <= c.omega);
        }
        CHECK(orders.size() == 4);
        CHECK(round.selected < 4);
        CHECK(round.selected == select_best_index(round.candidates));
        CHECK(round.audit_passed);
        CHECK(round.active_before == round.active_after);
    }
    CHECK(r.model.mask_violations() == 0);
    CHECK(r.model.mask().active_fraction() <= c.omega);
    CHECK(r.trace.final_mask_hash == r.model.mask().hash());
    REQUIRE(r.trace.final_report);
    CHECK(r.trace.final_report->mia_acc_b_pct);
}

TEST_CASE("runs are deterministic") {
    const auto [train, test] = tiny_data();
    const RunConfig c = tiny_config();
    const RunResult a = run_safecompress(c, train, test), b = run_safecompress(c, train, test);
    CHECK(a.trace.selected_strategies() == b.trace.selected_strategies());
    CHECK(a.trace.final_mask_hash == b.trace.final_mask_hash);
    CHECK(same_weights(a.model, b.model));
    CHECK(a.trace.final_report->score == b.trace.final_report->score);
}

TEST_CASE("multi-attack mode scores both attacks") {
    const auto [train, test] = tiny_data();
    RunConfig c = tiny_config(SelectionMode::Multi);
    c.total_rounds = 1;
    const RunResult r = run_safecompress(c, train, test);
    for (const auto& cand : r.trace.rounds[0].candidates) {
        CHECK(cand.mia_acc_b_pct);
        CHECK(cand.mia_acc_w_pct);
        REQUIRE(cand.tm_m);
        CHECK(cand.score == *cand.tm_m);
    }
    CHECK(r.trace.final_report->tm_m);
}

TEST_CASE("adversarial step with beta 0 is a plain step on the members") {
    const auto [train, test] = tiny_data();
    MixedBatch b = mixed_batch(train, test, 8);
    TargetModel plain = build_mlp(std::vector<Index>{6, 16, 3}, 0.5, 3);
    TargetModel adv = plain;
    AttackerModel adversary(AttackKind::BlackBox, 3, 0, 8, 5);
    Optimizer<double> opt_plain(OptimizerConfig::sgd(0.1)), opt_adv(OptimizerConfig::sgd(0.1));
    Optimizer<double> opt_attacker(OptimizerConfig::adam(1e-3));
    const LabeledDataset members = b.all.subset(b.member_rows);
    for (int i = 0; i < 3; ++i) {
        train_step(plain, opt_plain, members.features, members.label_column());
        adversarial_train_step(adv, opt_adv, adversary, opt_attacker, b.x, b.labels,
                               std::span<const bool>(b.flags.get(), b.labels.size()), 0.0);
    }
    CHECK(same_weights(plain, adv));
    CHECK(adv.iterations_done() == 3);
}

TEST_CASE("adversarial step input errors") {
    const auto [train, test] = tiny_data();
    MixedBatch b = mixed_batch(train, test, 4);
    TargetModel m = build_mlp(std::vector<Index>{6, 8, 3}, 1.0, 1);
    AttackerModel adversary(AttackKind::BlackBox, 3, 0, 8, 1);
    Optimizer<double> opt(OptimizerConfig::sgd(0.1)), adv_opt(OptimizerConfig::adam(1e-3));
    CHECK_THROWS_AS(adversarial_train_step(m, opt, adversary, adv_opt, b.x, b.labels, {}, 0.1), RangeError);
    CHECK_THROWS_AS(adversarial_train_step(m, opt, adversary, adv_opt, b.x, b.labels,
                                           std::span<const bool>(b.flags.get(), 3), 0.1),
                    RangeError);
    AttackerModel white(AttackKind::WhiteBox, 3, 24, 8, 1);
    CHECK_THROWS_AS(adversarial_train_step(m, opt, white, adv_opt, b.x, b.labels,
                                           std::span<const bool>(b.flags.get(), b.labels.size()), 0.1),
                    RangeError);
    auto none = std::make_unique<bool[]>(b.labels.size());
    CHECK_THROWS_AS(adversarial_train_step(m, opt, adversary, adv_opt, b.x, b.labels,
                                           std::span<const bool>(none.get(), b.labels.size()), 0.1),
                    RangeError);
}

TEST_CASE("the adversary's inner step raises its gain") {
    const auto [train, test] = tiny_data();
    std::vector<double> deltas;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        MixedBatch b = mixed_batch(train, test, 16);
        TargetModel m = build_mlp(std::vector<Index>{6, 16, 3}, 0.5, seed);
        AttackerModel adversary(AttackKind::BlackBox, 3, 0, 8, seed + 100);
        const LabeledDataset members = b.all.subset(b.member_rows), nonmembers = b.all.subset(b.nonmember_rows);
        const double before = mia_gain(adversary, m, members, nonmembers);
        Optimizer<double> frozen(OptimizerConfig::sgd(0.0)), adv_opt(OptimizerConfig::adam(1e-3));
        adversarial_train_step(m, frozen, adversary, adv_opt, b.x, b.labels,
                               std::span<const bool>(b.flags.get(), b.labels.size()), 0.1);
        deltas.push_back(mia_gain(adversary, m, members, nonmembers) - before);
    }
    for (double d : deltas) CHECK(d > 0.0);
}

TEST_CASE("the target's objective falls against a fixed adversary") {
    const auto [train, test] = tiny_data();
    MixedBatch b = mixed_batch(train, test, 16);
    TargetModel m = build_mlp(std::vector<Index>{6, 16, 3}, 0.5, 8);
    AttackerModel adversary(AttackKind::BlackBox, 3, 0, 8, 9);
    const LabeledDataset members = b.all.subset(b.member_rows), nonmembers = b.all.subset(b.nonmember_rows);
    const double beta = 0.5;
    const auto n = static_cast<double>(b.labels.size());
    auto objective = [&] {
        return batch_loss(m, members.features, members.label_column()) +
               beta * mia_gain(adversary, m, members, nonmembers) / n;
    };
    Optimizer<double> opt(OptimizerConfig::sgd(0.05)), still(OptimizerConfig::adam(0.0));
    const double start = objective();
    double previous = start;
    int rises = 0;
    for (int i = 0; i < 50; ++i) {
        adversarial_train_step(m, opt, adversary, still, b.x, b.labels,
                               std::span<const bool>(b.flags.get(), b.labels.size()), beta);
        const double now = objective();
        rises += now > previous + 1e-12;
        previous = now;
    }
    CHECK(previous < start);
    CHECK(rises == 0);
}

TEST_CASE("adversarial runs keep the invariants") {
    const auto [train, test] = tiny_data();
    RunConfig c = tiny_config();
    c.adversarial_training = true;
    const RunResult r = run_safecompress(c, train, test);
    for (const auto& round : r.trace.rounds) CHECK(round.audit_passed);
    CHECK(r.model.mask_violations() == 0);
}

TEST_CASE("baseline at omega 1 is the dense pretrained model") {
    const auto [train, test] = tiny_data();
    RunConfig c = tiny_config();
    c.omega = 1.0;
    const RunResult r = run_baseline_prune_finetune(c, train, test);
    CHECK(same_weights(r.model, dense_pretrain(c, train)));
    CHECK(r.trace.final_mask_hash == r.trace.initial_mask_hash);
}

TEST_CASE("baseline prunes to omega") {
    const auto [train, test] = tiny_data();
    const RunConfig c = tiny_config();
    const RunResult r = run_baseline_prune_finetune(c, train, test);
    CHECK(r.model.mask().active_fraction() <= c.omega);
    CHECK(r.model.mask().active_fraction() > c.omega - 0.01);
    CHECK(r.model.mask_violations() == 0);
    REQUIRE(r.trace.final_report);
    CHECK(r.trace.final_sparsity == r.model.mask().active_fraction());
}

TEST_CASE("final evaluation is reproducible") {
    const auto [train, test] = tiny_data();
    const RunConfig c = tiny_config(SelectionMode::Multi);
    const TargetModel m = dense_pretrain(c, train);
    const MembershipSplit split = run_split(c, train, test);
    const EvalReport a = evaluate_model(m, test, split, c, final_eval_seed(c));
    const EvalReport b = evaluate_model(m, test, split, c, final_eval_seed(c));
    CHECK(a.score == b.score);
    CHECK(*a.mia_acc_w_pct == *b.mia_acc_w_pct);
}

}  // TEST_SUITE
