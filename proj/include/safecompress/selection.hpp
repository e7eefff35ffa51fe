#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "safecompress/sparse_mask.hpp"

namespace safecompress {

/// (task_acc_pct ^ lambda) / mia_acc_pct, both in percent units (0-100).
/// Percent units matter once lambda != 1: the exponent is not
/// scale-invariant.
double tm_score(double task_acc_pct, double mia_acc_pct, double lambda = 1.0);

/// alpha * tm_black_box + (1 - alpha) * tm_white_box.
double tm_score_multi(double tm_black_box, double tm_white_box, double alpha = 0.5);

enum class SelectionMode { BlackBox, WhiteBox, Multi };

std::string_view selection_mode_name(SelectionMode mode);
SelectionMode parse_selection_mode(std::string_view name);

/// One evaluated model: a candidate from a round, the selected model, or a
/// baseline. Accuracies are percentages.
struct EvalReport {
    int candidate_id = 0;
    std::optional<UpdateStrategy> strategy;
    double task_acc_pct = 0.0;
    std::optional<double> mia_acc_b_pct;
    std::optional<double> mia_acc_w_pct;
    std::optional<double> tm_b;
    std::optional<double> tm_w;
    std::optional<double> tm_m;
    /// The score candidates are ranked by: tm_b, tm_w or tm_m by mode.
    double score = 0.0;
    double sparsity = 0.0;
};

/// Fills the TM fields and `score` from the stored accuracies.
void score_report(EvalReport& report, SelectionMode mode, double lambda, double alpha);

/// Highest `score`; ties go to the earliest strategy in the fixed enumeration
/// (reports without a strategy rank after those with one), then to the
/// earlier report.
std::size_t select_best_index(std::span<const EvalReport> reports);
const EvalReport& select_best(std::span<const EvalReport> reports);

}  // namespace safecompress
