#include <doctest.h>

#include <cmath>

#include "safecompress/selection.hpp"
#include "support.hpp"

using namespace safecompress;

namespace {

EvalReport scored(int order, double score) {
    EvalReport r;
    r.candidate_id = order;
    r.strategy = UpdateStrategy::all()[static_cast<std::size_t>(order)];
    r.score = score;
    return r;
}

}  // namespace

TEST_SUITE("selection") {

TEST_CASE("TM-score reference values at lambda = 1") {
    CHECK(std::abs(tm_score(69.52, 51.75) - 1.34) <= 0.005);
    CHECK(std::abs(tm_score(72.64, 67.33) - 1.08) <= 0.005);
    CHECK(tm_score(50.0, 50.0) == 1.0);
}

TEST_CASE("lambda sweep needs percent units") {
    const double lambdas[] = {0.8, 0.9, 1.0, 1.1, 1.2};
    const double expected[] = {0.58, 0.88, 1.34, 2.05, 3.14};
    for (int i = 0; i < 5; ++i) CHECK(std::abs(tm_score(69.52, 51.75, lambdas[i]) - expected[i]) <= 0.005);
    // Fractions give a different value once the exponent is not 1.
    CHECK(std::abs(tm_score(0.6952, 0.5175, 0.8) - 0.58) > 0.1);
}

TEST_CASE("multi-attack blend") {
    const double tb = tm_score(68.13, 52.32), tw = tm_score(68.13, 59.01);
    CHECK(std::abs(tm_score_multi(tb, tw, 0.5) - 1.23) <= 0.005);
    CHECK(tm_score_multi(tb, tw, 1.0) == tb);
    CHECK(tm_score_multi(tb, tw, 0.0) == tw);
    CHECK_THROWS_AS(tm_score_multi(tb, tw, 1.5), RangeError);
}

TEST_CASE("zero MIA accuracy is rejected") {
    CHECK_THROWS_AS(tm_score(50.0, 0.0), RangeError);
}

TEST_CASE("monotone in both accuracies") {
    CHECK(tm_score(70.0, 55.0) > tm_score(69.0, 55.0));
    CHECK(tm_score(70.0, 55.0) < tm_score(70.0, 54.0));
    CHECK(tm_score(70.0, 55.0, 1.2) > tm_score(69.0, 55.0, 1.2));
}

TEST_CASE("percent and fraction units select the same candidate at lambda = 1") {
    Rng rng(3);
    std::uniform_real_distribution<double> acc(40.0, 90.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<EvalReport> pct, frac;
        for (int i = 0; i < 4; ++i) {
            const double t = acc(rng), m = acc(rng);
            pct.push_back(scored(i, tm_score(t, m)));
            frac.push_back(scored(i, tm_score(t / 100.0, m / 100.0)));
            CHECK(pct.back().score == doctest::Approx(frac.back().score).epsilon(1e-12));
        }
        CHECK(select_best_index(pct) == select_best_index(frac));
    }
}

TEST_CASE("ties go to the earlier strategy") {
    std::vector<EvalReport> r{scored(0, 1.1), scored(1, 1.3), scored(2, 0.9), scored(3, 1.3)};
    CHECK(select_best_index(r) == 1);
    std::vector<EvalReport> reversed{scored(3, 1.3), scored(2, 0.9), scored(1, 1.3), scored(0, 1.1)};
    CHECK(select_best(reversed).strategy->order() == 1);
    EvalReport plain;
    plain.score = 1.3;
    std::vector<EvalReport> with_plain{plain, scored(2, 1.3)};
    CHECK(select_best_index(with_plain) == 1);
}

TEST_CASE("single candidate and empty list") {
    std::vector<EvalReport> one{scored(2, 0.4)};
    CHECK(select_best_index(one) == 0);
    CHECK_THROWS_AS(select_best_index(std::vector<EvalReport>{}), RangeError);
}

TEST_CASE("selection equals a linear scan and ignores common scaling") {
    Rng rng(9);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<EvalReport> r;
        for (int i = 0; i < 4; ++i) r.push_back(scored(i, std::round(u(rng) * 10.0) / 10.0));
        std::size_t best = 0;
        for (std::size_t i = 1; i < r.size(); ++i)
            if (r[i].score > r[best].score) best = i;
        CHECK(select_best_index(r) == best);
        for (auto& x : r) x.score *= 3.7;
        CHECK(select_best_index(r) == best);
    }
}

TEST_CASE("score_report fills the fields of each mode") {
    EvalReport r;
    r.task_acc_pct = 68.13;
    r.mia_acc_b_pct = 52.32;
    r.mia_acc_w_pct = 59.01;
    score_report(r, SelectionMode::BlackBox, 1.0, 0.5);
    CHECK(r.score == *r.tm_b);
    CHECK_FALSE(r.tm_w);
    score_report(r, SelectionMode::WhiteBox, 1.0, 0.5);
    CHECK(r.score == *r.tm_w);
    CHECK_FALSE(r.tm_b);
    score_report(r, SelectionMode::Multi, 1.0, 0.5);
    CHECK(r.score == doctest::Approx(0.5 * *r.tm_b + 0.5 * *r.tm_w));
    CHECK(std::abs(r.score - 1.23) <= 0.005);

    EvalReport missing;
    missing.task_acc_pct = 50;
    CHECK_THROWS_AS(score_report(missing, SelectionMode::BlackBox, 1.0, 0.5), RangeError);
}

TEST_CASE("mode names") {
    for (auto m : {SelectionMode::BlackBox, SelectionMode::WhiteBox, SelectionMode::Multi})
        CHECK(parse_selection_mode(selection_mode_name(m)) == m);
    CHECK_THROWS_AS(parse_selection_mode("xmia"), RangeError);
}

}  // TEST_SUITE
