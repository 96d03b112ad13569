#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "promptaug/metrics.hpp"
#include "promptaug/splits.hpp"

namespace promptaug {

struct DocRecord {
    std::string title;
    std::string text;
};

// A BEIR-layout dataset in memory: corpus, queries, per-split qrels, and the
// derived unlabeled pool (corpus minus every qrels document).
struct DatasetBundle {
    std::map<std::string, DocRecord> corpus;
    std::map<std::string, std::string> queries;
    Qrels train_qrels;
    Qrels eval_qrels;
    Qrels test_qrels;
    std::vector<std::string> unlabeled_doc_ids;
    bool eval_equals_test = false;

    std::string doc_text(const std::string& doc_id) const;

    // Sorted (doc_id, text) views used by the index and encoder stages.
    std::vector<std::pair<std::string, std::string>> corpus_texts() const;
    std::vector<std::pair<std::string, std::string>> unlabeled_texts() const;

    void derive_unlabeled();
    void validate() const;
};

// Reads corpus.jsonl / queries.jsonl / qrels/{train,dev,test}.tsv. Missing
// splits are tolerated with a warning; a missing test split falls back to the
// dev split (the MS MARCO convention) and is flagged on the bundle.
DatasetBundle load_beir(const std::string& dir);

void save_beir(const DatasetBundle& bundle, const std::string& dir);

// Template-generated corpus with one known slot-filled question per document.
// Every document carries a unique key term that also appears in its query, so
// each ground-truth query retrieves its own document at BM25 rank 1. Splits
// are carved deterministically from the seed.
DatasetBundle make_synthetic(size_t n_docs, int n_templates, int vocab_size, uint64_t seed);

// X distinct train queries with all their positive documents, then Y distinct
// queries from the remainder; the query sets are disjoint.
std::pair<SplitSample, SplitSample> sample_splits(const DatasetBundle& bundle, int x, int y,
                                                  uint64_t seed);

}  // namespace promptaug
