#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "safecompress/attacker.hpp"
#include "safecompress/selection.hpp"
#include "safecompress/sparse_update.hpp"
#include "safecompress/target_model.hpp"

namespace safecompress {

struct RunConfig {
    SelectionMode mode = SelectionMode::BlackBox;
    double omega = 0.1;
    double lambda = 1.0;
    double alpha = 0.5;
    double beta = 0.1;
    std::vector<Index> hidden_layers{128, 128};
    long iterations_per_round = 200;
    long total_rounds = 10;
    Index batch_size = 64;
    double learning_rate = 0.1;
    double momentum = 0.0;
    double prune_fraction = 0.3;
    bool cosine_decay = true;
    double threshold = 1e-3;
    Index growth_batch_size = 128;
    FineTuneConfig fine_tune{};
    AttackerTrainConfig attacker{};
    bool adversarial_training = false;
    std::uint64_t seed = 0;

    /// Throws ConfigError naming the first offending field.
    void validate() const;

    TrainConfig train_config() const;
    double prune_fraction_at(long round) const;
    std::vector<Index> layer_dims(Index input_dim, int class_count) const;

    bool operator==(const RunConfig&) const = default;
};

struct StageSeconds {
    double training = 0.0;
    double sparse_update = 0.0;
    double attack_simulation = 0.0;
    double evaluation = 0.0;
};

struct RoundRecord {
    long round = 0;
    double prune_fraction = 0.0;
    std::vector<EvalReport> candidates;
    std::size_t selected = 0;
    Index active_before = 0;
    Index active_after = 0;
    double sparsity = 0.0;
    bool audit_passed = false;
    StageSeconds seconds;

    const EvalReport& selected_report() const { return candidates.at(selected); }
};

struct RunTrace {
    SelectionMode mode = SelectionMode::BlackBox;
    std::vector<RoundRecord> rounds;
    std::uint64_t initial_mask_hash = 0;
    /// Final model scored by freshly trained attackers, comparable across
    /// methods.
    std::optional<EvalReport> final_report;
    std::uint64_t final_mask_hash = 0;
    double final_sparsity = 0.0;

    std::vector<std::string> selected_strategies() const;
};

struct RunResult {
    TargetModel model;
    RunTrace trace;
};

class RunError : public Error {
public:
    RunError(long round, const std::string& message)
        : Error("round " + std::to_string(round) + ": " + message), round_(round) {}
    long round() const noexcept { return round_; }

private:
    long round_;
};

/// The membership split a run with this config uses.
MembershipSplit run_split(const RunConfig& config, const LabeledDataset& train, const LabeledDataset& test);

/// Seed of the final attacker battery, shared by both methods.
std::uint64_t final_eval_seed(const RunConfig& config);

/// The attack kinds a mode simulates: one for bmia/wmia, both for mmia.
std::vector<AttackKind> attack_kinds(SelectionMode mode);

/// Scores `model` with attackers trained from scratch for the full epoch
/// budget, so results are comparable between methods.
EvalReport evaluate_model(const TargetModel& model, const LabeledDataset& test, const MembershipSplit& split,
                          const RunConfig& config, std::uint64_t seed);

/// The full prune/grow/attack/select loop.
RunResult run_safecompress(const RunConfig& config, const LabeledDataset& train, const LabeledDataset& test);

/// One min-max step. The adversary first takes an ascent step on its gain
/// over the whole batch (target outputs held fixed); the target then takes a
/// descent step on cross-entropy over the member rows plus beta times the
/// adversary's mean gain over all rows (adversary held fixed).
void adversarial_train_step(TargetModel& model, Optimizer<double>& target_optimizer, AttackerModel& adversary,
                            Optimizer<double>& adversary_optimizer, const Matrix& features, std::span<const int> labels,
                            std::span<const bool> member_flags, double beta);

/// The dense model the baseline prunes: omega = 1, trained for
/// total_rounds * iterations_per_round steps.
TargetModel dense_pretrain(const RunConfig& config, const LabeledDataset& train);

/// Dense pretraining for the same number of steps, one-shot global
/// magnitude pruning to omega, then fine-tuning; scored like run_safecompress.
/// With omega = 1 nothing is pruned and the fine-tune is skipped, leaving
/// plain dense training.
RunResult run_baseline_prune_finetune(const RunConfig& config, const LabeledDataset& train,
                                      const LabeledDataset& test);

}  // namespace safecompress
