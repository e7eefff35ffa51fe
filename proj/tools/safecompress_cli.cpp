#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "safecompress/experiment.hpp"

using namespace safecompress;
using nlohmann::json;

namespace {

struct Overrides {
    std::string config;
    std::optional<std::string> mode;
    std::optional<double> omega, lambda, alpha, beta;
    std::optional<long> rounds, iterations;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
    bool adversarial = false;
};

void add_run_flags(CLI::App* cmd, Overrides& o) {
    cmd->add_option("-c,--config", o.config, "JSON experiment file");
    cmd->add_option("--mode", o.mode, "bmia, wmia or mmia");
    cmd->add_option("--omega", o.omega, "target density");
    cmd->add_option("--lambda", o.lambda, "TM-score exponent");
    cmd->add_option("--alpha", o.alpha, "black-box weight of the combined score");
    cmd->add_option("--beta", o.beta, "adversarial-training weight");
    cmd->add_option("--rounds", o.rounds, "total rounds");
    cmd->add_option("--iterations", o.iterations, "training iterations per round");
    cmd->add_option("--seed", o.seed, "run seed");
    cmd->add_option("-o,--output-dir", o.output_dir, "where reports and checkpoints go");
    cmd->add_flag("--adversarial", o.adversarial, "enable adversarial training");
}

ExperimentSpec resolve(const Overrides& o) {
    json doc = json::object();
    if (!o.config.empty()) {
        std::ifstream in(o.config);
        if (!in) throw ConfigError("$", "cannot open " + o.config);
        try {
            doc = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ConfigError("$", o.config + ": " + e.what());
        }
    }
    if (!doc.is_object()) throw ConfigError("$", "expected an object");
    if (o.mode) doc["mode"] = *o.mode;
    if (o.omega) doc["omega"] = *o.omega;
    if (o.lambda) doc["lambda"] = *o.lambda;
    if (o.alpha) doc["alpha"] = *o.alpha;
    if (o.beta) doc["beta"] = *o.beta;
    if (o.rounds) doc["total_rounds"] = *o.rounds;
    if (o.iterations) doc["iterations_per_round"] = *o.iterations;
    if (o.seed) doc["seed"] = *o.seed;
    if (o.output_dir) doc["output_dir"] = *o.output_dir;
    if (o.adversarial) doc["adversarial_training"] = true;
    return parse_config(doc);
}

void print_report(const char* label, const EvalReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("-"); };
    std::printf("%s: task %.2f%%  mia_b %s  mia_w %s  score %.4f  density %.4f\n", label, r.task_acc_pct,
                opt(r.mia_acc_b_pct).c_str(), opt(r.mia_acc_w_pct).c_str(), r.score, r.sparsity);
}

void write_outputs(const ExperimentSpec& spec, const RunResult& result) {
    const std::filesystem::path dir = spec.output_dir;
    emit_report(result.trace, dir);
    save_checkpoint(result.model, result.trace, spec.run.seed, dir / "model.safc");
    std::ofstream(dir / "config.json") << to_json(spec).dump(2) << "\n";
}

int run_method(const Overrides& o, bool baseline) {
    const ExperimentSpec spec = resolve(o);
    const auto [train, test] = load_dataset(spec.dataset);
    const RunResult result = baseline ? run_baseline_prune_finetune(spec.run, train, test)
                                      : run_safecompress(spec.run, train, test);
    for (const auto& rec : result.trace.rounds)
        std::printf("round %ld  p=%.3f  selected %s  score %.4f\n", rec.round, rec.prune_fraction,
                    rec.selected_report().strategy->name().c_str(), rec.selected_report().score);
    print_report(baseline ? "baseline" : "final", *result.trace.final_report);
    write_outputs(spec, result);
    std::printf("wrote %s\n", spec.output_dir.c_str());
    return 0;
}

int attack_eval(const Overrides& o, const std::string& checkpoint) {
    const ExperimentSpec spec = resolve(o);
    const auto [train, test] = load_dataset(spec.dataset);
    const Checkpoint cp = load_checkpoint(checkpoint);
    if (cp.model.input_dim() != train.feature_count() || cp.model.class_count() != train.class_count)
        throw DataError("checkpoint does not match the dataset's feature or class count");
    const MembershipSplit split = run_split(spec.run, train, test);
    const EvalReport r = evaluate_model(cp.model, test, split, spec.run, final_eval_seed(spec.run));
    print_report("attack-eval", r);
    RunTrace trace;
    trace.mode = spec.run.mode;
    trace.final_report = r;
    trace.final_mask_hash = cp.model.mask().hash();
    trace.final_sparsity = cp.model.mask().active_fraction();
    std::filesystem::create_directories(spec.output_dir);
    std::ofstream(std::filesystem::path(spec.output_dir) / "attack_eval.json") << summary_json(trace).dump(2) << "\n";
    return 0;
}

int report(const std::string& dir) {
    const auto rows = read_rounds_csv(std::filesystem::path(dir) / "rounds.csv");
    std::printf("%-5s %-32s %8s %8s %8s %8s %8s %8s %8s\n", "round", "strategy", "task", "mia_b", "mia_w", "tm_b",
                "tm_w", "tm_m", "density");
    auto cell = [](const std::optional<double>& v) {
        char buf[16];
        if (v)
            std::snprintf(buf, sizeof buf, "%8.3f", *v);
        else
            std::snprintf(buf, sizeof buf, "%8s", "-");
        return std::string(buf);
    };
    for (const auto& row : rows) {
        const auto& r = row.report;
        std::printf("%-5ld %-32s %8.2f %s %s %s %s %s %8.4f\n", row.round, row.strategy.c_str(), r.task_acc_pct,
                    cell(r.mia_acc_b_pct).c_str(), cell(r.mia_acc_w_pct).c_str(), cell(r.tm_b).c_str(),
                    cell(r.tm_w).c_str(), cell(r.tm_m).c_str(), r.sparsity);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse training with membership-inference safety testing"};
    app.require_subcommand(1);

    Overrides compress_opts, baseline_opts, eval_opts;
    bool emit_defaults = false;
    std::string checkpoint, report_dir;

    auto* compress = app.add_subcommand("compress", "prune/grow training with attack-driven candidate selection");
    add_run_flags(compress, compress_opts);
    compress->add_flag("--emit-defaults", emit_defaults, "print the resolved config and exit");

    auto* baseline = app.add_subcommand("baseline", "dense pretraining, one-shot magnitude pruning, fine-tuning");
    add_run_flags(baseline, baseline_opts);

    auto* eval = app.add_subcommand("attack-eval", "attack a saved checkpoint with freshly trained attackers");
    add_run_flags(eval, eval_opts);
    eval->add_option("--checkpoint", checkpoint, "model.safc file")->required();

    auto* rep = app.add_subcommand("report", "print a run's rounds.csv");
    rep->add_option("dir", report_dir, "output directory of a run")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*compress) {
            if (emit_defaults) {
                std::cout << to_json(resolve(compress_opts)).dump(2) << "\n";
                return 0;
            }
            return run_method(compress_opts, false);
        }
        if (*baseline) return run_method(baseline_opts, true);
        if (*eval) return attack_eval(eval_opts, checkpoint);
        if (*rep) return report(report_dir);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
