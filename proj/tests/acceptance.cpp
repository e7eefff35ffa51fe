// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "safecompress/experiment.hpp"
#include "support.hpp"

using namespace safecompress;
namespace fs = std::filesystem;

namespace {

constexpr int kSeeds = 5;

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Outcome tm_arithmetic() {
    Outcome o;
    std::ostringstream d;
    auto expect = [&](const char* what, double got, double want) {
        const bool ok = std::abs(got - want) <= 0.005;
        o.pass = o.pass && ok;
        d << what << '=' << fmt("%.4f", got) << (ok ? "" : "(want " + fmt("%.2f", want) + ")") << ' ';
    };
    expect("tm(69.52,51.75)", tm_score(69.52, 51.75), 1.34);
    expect("tm(72.64,67.33)", tm_score(72.64, 67.33), 1.08);
    const double lambdas[] = {0.8, 0.9, 1.0, 1.1, 1.2};
    const double sweep[] = {0.58, 0.88, 1.34, 2.05, 3.14};
    for (int i = 0; i < 5; ++i)
        expect(fmt("lambda%.1f", lambdas[i]).c_str(), tm_score(69.52, 51.75, lambdas[i]), sweep[i]);
    expect("mmia", tm_score_multi(tm_score(68.13, 52.32), tm_score(68.13, 59.01), 0.5), 1.23);
    o.detail = d.str();
    return o;
}

Outcome sparsity_invariants() {
    Outcome o;
    const auto [train, test] = generate_synthetic(support::overfit_data(), 1);
    const std::vector<Index> dims{32, 128, 128, 4};
    const auto strategies = UpdateStrategy::all();
    std::size_t updates = 0, broken = 0;
    double worst_density = 0.0;
    for (double omega : {0.05, 0.1, 0.3}) {
        TargetModel model = build_mlp(dims, omega, 7);
        if (model.mask().active_fraction() > omega) ++broken;
        Rng rng(11);
        TrainConfig tc;
        tc.iterations = 5;
        for (int step = 0; step < 60; ++step) {
            train_rounds(model, train, tc, static_cast<std::uint64_t>(step));
            auto batch = permutation(train.size(), rng);
            batch.resize(64);
            const LabeledDataset b = train.subset(batch);
            const auto grads = dense_weight_gradients(model, b.features, b.label_column());
            const UpdateStrategy s = strategies[static_cast<std::size_t>(step) % strategies.size()];
            const TargetModel next = sparse_update(model, s, 0.3, 1e-3, grads, static_cast<std::uint64_t>(step));
            ++updates;
            bool ok = next.mask().active_fraction() <= omega && next.mask_violations() == 0 &&
                      next.mask().active_count() == model.mask().active_count();
            for (std::size_t k = 0; k < model.layer_count(); ++k)
                ok = ok && next.mask().active_count(k) == model.mask().active_count(k);
            broken += !ok;
            worst_density = std::max(worst_density, next.mask().active_fraction() / omega);
            model = next;
        }
    }
    o.pass = broken == 0 && updates >= 50;
    o.detail = fmt("%zu updates, %zu violations, max density/omega %.6f", updates, broken, worst_density);
    return o;
}

Outcome autograd_checks() {
    Outcome o;
    double worst = 0.0;
    std::string worst_name;
    int cases = 0, failed = 0;
    for (int op = 0; op < support::kOpCaseCount; ++op) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            auto p = support::make_op_problem(op, 1000 + seed);
            const auto r = support::finite_difference_check(p.graph, p.root, p.inputs, p.params);
            ++cases;
            failed += !(r.max_error < 1e-4);
            if (r.max_error >= worst) {
                worst = r.max_error;
                worst_name = p.name;
            }
        }
    }
    o.pass = failed == 0 && cases >= 100;
    o.detail = fmt("%d cases, %d over 1e-4, worst %.3g (%s)", cases, failed, worst, worst_name.c_str());
    return o;
}

Outcome mia_signal() {
    Outcome o;
    std::vector<double> overfit, untrained;
    for (int s = 0; s < kSeeds; ++s) {
        const auto seed = static_cast<std::uint64_t>(s);
        const auto [train, test] = generate_synthetic(support::overfit_data(), seed);
        RunConfig c = support::overfit_run(SelectionMode::BlackBox, seed);
        c.omega = 1.0;
        const MembershipSplit split = run_split(c, train, test);
        const TargetModel fitted = dense_pretrain(c, train);
        const TargetModel fresh = build_mlp(c.layer_dims(train.feature_count(), train.class_count), 1.0, seed);
        for (auto [target, out] : {std::pair{&fitted, &overfit}, std::pair{&fresh, &untrained}}) {
            const AttackerModel a = train_attacker(AttackKind::BlackBox, *target, split, c.attacker, seed);
            out->push_back(100.0 * mia_accuracy(a, *target, split, seed));
        }
    }
    const double m_fit = support::median(overfit), m_fresh = support::median(untrained);
    o.pass = m_fit >= 60.0 && m_fresh >= 46.0 && m_fresh <= 54.0;
    o.detail = fmt("overfit median %.2f%% (>= 60), untrained median %.2f%% (in [46, 54])", m_fit, m_fresh);
    return o;
}

struct Summary {
    std::vector<double> task, mia_b, mia_w, tm;
};

void record(Summary& s, const EvalReport& r) {
    s.task.push_back(r.task_acc_pct);
    if (r.mia_acc_b_pct) s.mia_b.push_back(*r.mia_acc_b_pct);
    if (r.mia_acc_w_pct) s.mia_w.push_back(*r.mia_acc_w_pct);
    s.tm.push_back(r.score);
}

Outcome defense_ordering() {
    Outcome o;
    std::ostringstream d;
    for (SelectionMode mode : {SelectionMode::BlackBox, SelectionMode::WhiteBox, SelectionMode::Multi}) {
        Summary sc, base;
        for (int s = 0; s < kSeeds; ++s) {
            const auto seed = static_cast<std::uint64_t>(s);
            const auto [train, test] = generate_synthetic(support::overfit_data(), seed);
            const RunConfig c = support::overfit_run(mode, seed);
            record(sc, *run_safecompress(c, train, test).trace.final_report);
            record(base, *run_baseline_prune_finetune(c, train, test).trace.final_report);
        }
        using support::median;
        bool ok = median(sc.task) >= median(base.task) - 5.0 && median(sc.tm) > median(base.tm);
        d << selection_mode_name(mode) << ": task " << fmt("%.2f/%.2f", median(sc.task), median(base.task));
        if (!sc.mia_b.empty()) {
            ok = ok && median(sc.mia_b) <= median(base.mia_b) - 5.0;
            d << fmt(" mia_b %.2f/%.2f", median(sc.mia_b), median(base.mia_b));
        }
        if (!sc.mia_w.empty()) {
            ok = ok && median(sc.mia_w) <= median(base.mia_w) - 5.0;
            d << fmt(" mia_w %.2f/%.2f", median(sc.mia_w), median(base.mia_w));
        }
        d << fmt(" tm %.4f/%.4f", median(sc.tm), median(base.tm)) << (ok ? " ok" : " FAIL") << "; ";
        o.pass = o.pass && ok;
    }
    o.detail = d.str() + "(compressed/baseline medians)";
    return o;
}

Outcome adversarial_non_degradation() {
    Outcome o;
    Summary plain, adv;
    for (int s = 0; s < kSeeds; ++s) {
        const auto seed = static_cast<std::uint64_t>(s);
        const auto [train, test] = generate_synthetic(support::overfit_data(), seed);
        RunConfig c = support::overfit_run(SelectionMode::BlackBox, seed);
        c.adversarial_training = true;
        c.beta = 0.0;
        record(plain, *run_safecompress(c, train, test).trace.final_report);
        c.beta = 0.1;
        record(adv, *run_safecompress(c, train, test).trace.final_report);
    }
    using support::median;
    const double mia0 = median(plain.mia_b), mia1 = median(adv.mia_b);
    const double tm0 = median(plain.tm), tm1 = median(adv.tm);
    o.pass = mia1 <= mia0 + 1.0 && tm1 >= tm0 - 0.02;
    o.detail = fmt("mia %.2f (beta 0.1) vs %.2f (beta 0), tm %.4f vs %.4f", mia1, mia0, tm1, tm0);
    return o;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism() {
    Outcome o;
    const auto [train, test] = generate_synthetic(support::overfit_data(), 3);
    const RunConfig c = support::overfit_run(SelectionMode::BlackBox, 3);
    const fs::path root = fs::temp_directory_path() / "safecompress_acceptance";
    std::vector<RunResult> runs;
    for (int i = 0; i < 2; ++i) {
        runs.push_back(run_safecompress(c, train, test));
        fs::remove_all(root / std::to_string(i));
        emit_report(runs.back().trace, root / std::to_string(i));
    }
    const bool same_strategies = runs[0].trace.selected_strategies() == runs[1].trace.selected_strategies();
    const bool same_hash = runs[0].trace.final_mask_hash == runs[1].trace.final_mask_hash;
    const bool same_csv = slurp(root / "0" / "rounds.csv") == slurp(root / "1" / "rounds.csv");
    o.pass = same_strategies && same_hash && same_csv;
    o.detail = fmt("strategies %s, mask hash %016llx %s, rounds.csv %s", same_strategies ? "equal" : "differ",
                   static_cast<unsigned long long>(runs[0].trace.final_mask_hash), same_hash ? "equal" : "differs",
                   same_csv ? "byte-identical" : "differs");
    return o;
}

Outcome gain_oracle() {
    Outcome o;
    const auto [train, test] = generate_synthetic(support::overfit_data(), 0);
    const RunConfig c = support::overfit_run(SelectionMode::BlackBox, 0);
    const MembershipSplit split = run_split(c, train, test);
    const TargetModel target = build_mlp(c.layer_dims(train.feature_count(), train.class_count), c.omega, 0);
    AttackerModel coin(AttackKind::BlackBox, train.class_count, 0, 8, 0);
    coin.params().at("attacker.fusion.1.weight").values().setZero();
    coin.params().at("attacker.fusion.1.bias").values().setZero();
    const double n = static_cast<double>(split.known_train().size() + split.known_test().size());
    const double coin_gain = mia_gain(coin, target, split.known_train(), split.known_test());
    const double coin_err = std::abs(coin_gain - n * std::log(0.5));
    const std::vector<double> ones(split.known_train().size(), 1.0), zeros(split.known_test().size(), 0.0);
    const double perfect = mia_gain_from_scores(ones, zeros);
    o.pass = coin_err <= 1e-9 && perfect >= -1e-6;
    o.detail = fmt("constant-0.5 gain %.12f vs N ln 0.5 (N=%.0f), error %.3g; perfect gain %.3g", coin_gain, n,
                   coin_err, perfect);
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::vector<int> only;
    app.add_option("criteria", only, "criterion numbers to run (default: all)")->check(CLI::Range(1, 8));
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"TM-score arithmetic", tm_arithmetic},
        {"sparsity invariants", sparsity_invariants},
        {"autograd finite differences", autograd_checks},
        {"MIA signal oracle", mia_signal},
        {"defense ordering vs prune+finetune", defense_ordering},
        {"adversarial training non-degradation", adversarial_non_degradation},
        {"determinism", determinism},
        {"gain oracle", gain_oracle},
    };
    const std::set<int> selected(only.begin(), only.end());
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.count(id)) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome r;
        try {
            r = criteria[i].second();
        } catch (const std::exception& e) {
            r = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failures += !r.pass;
        std::printf("%s [%d] %s: %s (%.1fs)\n", r.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                    r.detail.c_str(), secs);
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
