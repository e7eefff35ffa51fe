#include "safecompress/selection.hpp"

#include <cmath>

namespace safecompress {

double tm_score(double task_acc_pct, double mia_acc_pct, double lambda) {
    if (!(mia_acc_pct > 0.0)) throw RangeError("TM-score needs a positive MIA accuracy");
    return std::pow(task_acc_pct, lambda) / mia_acc_pct;
}

double tm_score_multi(double tm_black_box, double tm_white_box, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw RangeError("alpha must lie in [0, 1]");
    return alpha * tm_black_box + (1.0 - alpha) * tm_white_box;
}

std::string_view selection_mode_name(SelectionMode mode) {
    switch (mode) {
        case SelectionMode::BlackBox: return "bmia";
        case SelectionMode::WhiteBox: return "wmia";
        case SelectionMode::Multi: return "mmia";
    }
    return "?";
}

SelectionMode parse_selection_mode(std::string_view name) {
    if (name == "bmia") return SelectionMode::BlackBox;
    if (name == "wmia") return SelectionMode::WhiteBox;
    if (name == "mmia") return SelectionMode::Multi;
    throw RangeError("unknown mode '" + std::string(name) + "' (expected bmia, wmia or mmia)");
}

void score_report(EvalReport& r, SelectionMode mode, double lambda, double alpha) {
    r.tm_b.reset();
    r.tm_w.reset();
    r.tm_m.reset();
    if (mode != SelectionMode::WhiteBox) {
        if (!r.mia_acc_b_pct) throw RangeError("report lacks a black-box MIA accuracy");
        r.tm_b = tm_score(r.task_acc_pct, *r.mia_acc_b_pct, lambda);
    }
    if (mode != SelectionMode::BlackBox) {
        if (!r.mia_acc_w_pct) throw RangeError("report lacks a white-box MIA accuracy");
        r.tm_w = tm_score(r.task_acc_pct, *r.mia_acc_w_pct, lambda);
    }
    switch (mode) {
        case SelectionMode::BlackBox: r.score = *r.tm_b; break;
        case SelectionMode::WhiteBox: r.score = *r.tm_w; break;
        case SelectionMode::Multi:
            r.tm_m = tm_score_multi(*r.tm_b, *r.tm_w, alpha);
            r.score = *r.tm_m;
            break;
    }
}

std::size_t select_best_index(std::span<const EvalReport> reports) {
    if (reports.empty()) throw RangeError("select_best: no candidates");
    auto rank = [](const EvalReport& r) { return r.strategy ? r.strategy->order() : 4; };
    std::size_t best = 0;
    for (std::size_t i = 1; i < reports.size(); ++i) {
        const auto &a = reports[i], &b = reports[best];
        if (a.score > b.score || (a.score == b.score && rank(a) < rank(b))) best = i;
    }
    return best;
}

const EvalReport& select_best(std::span<const EvalReport> reports) { return reports[select_best_index(reports)]; }

}  // namespace safecompress
