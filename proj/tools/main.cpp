// promptaug: soft-prompt-tuned weak query generation for dense retrieval
// augmentation, end to end. Subcommands mirror the pipeline stages; a single
// JSON config file carries every knob, with a few common flag overrides.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>

#include <nlohmann/json.hpp>

#include "promptaug/errors.hpp"
#include "promptaug/metrics.hpp"
#include "promptaug/pipeline.hpp"
#include "promptaug/util.hpp"

using namespace promptaug;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string data_dir;
    int64_t seed = -1;
    int threads = -1;
};

PipelineConfig load_config(const CommonFlags& flags) {
    nlohmann::json j = nlohmann::json::object();
    if (!flags.config_path.empty()) {
        j = nlohmann::json::parse(read_text_file(flags.config_path));
    }
    PipelineConfig cfg = PipelineConfig::from_json(j);
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (!flags.data_dir.empty()) cfg.data_dir = flags.data_dir;
    if (flags.seed >= 0) cfg.seed = static_cast<uint64_t>(flags.seed);
    if (flags.threads >= 0) cfg.threads = flags.threads;
    return cfg;
}

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("-c,--config", flags.config_path, "pipeline config JSON file");
    cmd->add_option("-o,--out", flags.out_dir, "output directory override");
    cmd->add_option("-d,--data", flags.data_dir, "BEIR dataset directory override");
    cmd->add_option("-s,--seed", flags.seed, "master seed override");
    cmd->add_option("-t,--threads", flags.threads, "worker threads (0 = all cores)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"soft-prompt weak-query augmentation pipeline for dense retrieval"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string stage_for_cmd;

    auto add_stage = [&](const std::string& name, const std::string& help) {
        CLI::App* cmd = app.add_subcommand(name, help);
        add_common(cmd, flags);
        cmd->callback([&, name]() { stage_for_cmd = name; });
        return cmd;
    };

    add_stage("prepare", "load or synthesize the dataset bundle, sample splits, build BM25");
    add_stage("pretrain-lm", "pretrain the tiny causal LM on the bundle corpus");
    add_stage("tune-prompt", "learn the soft prompt on the sampled train split");
    add_stage("filter-prompt", "select the best example-pair group by eval loss");
    add_stage("generate", "generate weak queries for the unlabeled pool");
    add_stage("filter-weak", "BM25 top-k filter over the weak datasets");
    add_stage("train-dr", "train bi-encoder retrievers for every condition");
    add_stage("eval", "evaluate run files and write the final report");
    add_stage("pipeline", "run every stage end to end");

    std::string sweep_axis = "x";
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "ablation sweeps (x, m or k)");
    add_common(sweep_cmd, flags);
    sweep_cmd->add_option("-a,--axis", sweep_axis, "sweep axis: x, m or k")->required();
    sweep_cmd->callback([&]() { stage_for_cmd = "sweep"; });

    // Standalone scorer: metrics from an existing TREC run and qrels TSV.
    std::string score_run_path, score_qrels_path, score_out;
    CLI::App* score_cmd =
        app.add_subcommand("score-run", "compute IR metrics for a TREC run against qrels");
    score_cmd->add_option("--run", score_run_path, "TREC run file")->required();
    score_cmd->add_option("--qrels", score_qrels_path, "BEIR-style qrels TSV")->required();
    score_cmd->add_option("--out", score_out, "write the JSON metrics report here");
    score_cmd->callback([&]() { stage_for_cmd = "score-run"; });

    CLI11_PARSE(app, argc, argv);

    try {
        if (stage_for_cmd == "score-run") {
            const Run run = Run::load_trec(score_run_path);
            const Qrels qrels = Qrels::load_tsv(score_qrels_path);
            const nlohmann::json report = evaluate_run(run, qrels).to_json();
            if (!score_out.empty()) {
                write_text_file(score_out, report.dump(2) + "\n");
            }
            std::printf("%s\n", report.dump(2).c_str());
            return 0;
        }

        PipelineConfig cfg = load_config(flags);
        if (stage_for_cmd == "sweep") {
            const nlohmann::json report = run_sweep(cfg, sweep_axis);
            std::printf("%s\n", report.dump(2).c_str());
            return 0;
        }

        Pipeline pipeline(cfg);
        if (stage_for_cmd == "prepare") {
            pipeline.prepare();
        } else if (stage_for_cmd == "pretrain-lm") {
            pipeline.pretrain_lm();
        } else if (stage_for_cmd == "tune-prompt") {
            pipeline.tune_prompt();
        } else if (stage_for_cmd == "filter-prompt") {
            pipeline.filter_prompt();
        } else if (stage_for_cmd == "generate") {
            pipeline.generate();
        } else if (stage_for_cmd == "filter-weak") {
            pipeline.filter_weak();
        } else if (stage_for_cmd == "train-dr") {
            pipeline.train_dr();
        } else if (stage_for_cmd == "eval") {
            std::printf("%s\n", pipeline.evaluate().dump(2).c_str());
        } else if (stage_for_cmd == "pipeline") {
            std::printf("%s\n", pipeline.run_all().dump(2).c_str());
        }
        std::fprintf(stderr, "[%s] done, artifacts in %s\n", stage_for_cmd.c_str(),
                     cfg.out_dir.c_str());
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 2;
    }
    return 0;
}
