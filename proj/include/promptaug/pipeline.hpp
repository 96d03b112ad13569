#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptaug/augmentor.hpp"
#include "promptaug/bm25.hpp"
#include "promptaug/data.hpp"
#include "promptaug/lm.hpp"
#include "promptaug/prompt_filter.hpp"
#include "promptaug/retriever.hpp"
#include "promptaug/soft_prompt.hpp"

namespace promptaug {

// Every knob of every stage; one JSON file drives the whole run. out_dir and
// threads are excluded from the config hash because they do not change any
// computed value.
struct PipelineConfig {
    std::string data_dir;  // empty: generate the synthetic bundle
    size_t synth_docs = 2000;
    int synth_templates = 4;
    int synth_vocab = 2600;

    int x = 50;
    int y = 100;
    int m = 2;
    int l_s = 50;
    std::string hard_prompt = "please generate query for document";
    int vocab_min_freq = 1;

    LMConfig lm;  // vocab_size resolved at prepare time
    PretrainConfig pretrain;
    TuningConfig tuning;

    int filter_num_groups = 0;  // 0: defaults to X
    std::string filter_mode = "best";

    GenerationConfig generation;
    size_t large_cap = 100000;
    size_t small_size = 5000;

    BM25Params bm25;
    std::vector<size_t> k_sweep = {10, 30, 50, 70};

    EncoderConfig encoder;
    bool shared_towers = false;
    DRTrainConfig dr;
    size_t run_depth = 1000;

    std::vector<std::string> conditions = {"bm25", "wo-aug", "sptar", "sptar-unfiltered"};

    uint64_t seed = 0;
    int threads = 0;
    std::string out_dir = "out";

    nlohmann::json to_json() const;
    static PipelineConfig from_json(const nlohmann::json& j);
    uint64_t config_hash() const;
};

// Staged pipeline with resume: each stage writes its artifacts plus a marker
// carrying the config hash; a stage whose marker matches is loaded instead of
// recomputed, which reproduces a fresh run byte for byte.
class Pipeline {
  public:
    explicit Pipeline(PipelineConfig cfg);

    void prepare();
    void pretrain_lm();
    void tune_prompt();
    void filter_prompt();
    void generate();
    void filter_weak();
    void train_dr();
    nlohmann::json evaluate();

    nlohmann::json run_all();

    const PipelineConfig& config() const { return cfg_; }
    const DatasetBundle& bundle();
    const TuningReport& tuning_report();

  private:
    struct Condition {
        std::string name;
        std::optional<size_t> chosen_k;
        std::string run_path;
        double eval_ndcg10 = 0.0;
    };

    std::string path(const std::string& rel) const;
    bool stage_done(const std::string& stage) const;
    void mark_done(const std::string& stage);
    void require(const std::string& stage);

    std::vector<PairRef> weak_to_pairs(const WeakDataset& weak);
    EvalProbe eval_probe();
    Condition train_condition_fixed(const std::string& name,
                                    const std::vector<PairRef>& pairs);
    Condition train_condition_sweep(const std::string& name, const std::string& weak_stem);

    PipelineConfig cfg_;
    int threads_ = 1;

    std::optional<DatasetBundle> bundle_;
    std::optional<SplitSample> s_train_;
    std::optional<SplitSample> s_eval_;
    std::optional<Vocabulary> vocab_;
    std::optional<InvertedIndex> index_;
    std::optional<DecoderLM> lm_;
    std::optional<SoftPrompt> prompt_;
    std::optional<TuningReport> tuning_report_;
    std::optional<std::vector<PairRef>> chosen_group_;
    PromptTemplate tmpl_;
};

nlohmann::json run_pipeline(const PipelineConfig& cfg);

// Ablation sweeps: axis is "x" (X in {10,30,50}), "m" (M in {1,2}) or "k"
// (reported from the main run's per-k scores).
nlohmann::json run_sweep(const PipelineConfig& base, const std::string& axis);

}  // namespace promptaug
