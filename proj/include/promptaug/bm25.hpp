#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptaug/weak_data.hpp"

namespace promptaug {

struct BM25Params {
    double k1 = 0.9;
    double b = 0.4;

    nlohmann::json to_json() const { return {{"k1", k1}, {"b", b}}; }
    static BM25Params from_json(const nlohmann::json& j) {
        BM25Params p;
        p.k1 = j.value("k1", 0.9);
        p.b = j.value("b", 0.4);
        return p;
    }
};

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;
};

// Descending score, ties ascending doc_id; only docs with score > 0.
using ScoredList = std::vector<ScoredDoc>;

// From-scratch inverted index with Lucene-flavoured BM25 scoring:
//   idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))
//   score  = sum over query token occurrences of
//            idf * tf*(k1+1) / (tf + k1*(1 - b + b*len/avgdl))
// No query-frequency saturation: a repeated query token contributes once per
// occurrence. The analyzer is the shared lowercase/alnum splitter.
class InvertedIndex {
  public:
    using Posting = std::pair<uint32_t, uint32_t>;  // (doc index, term frequency)

    static InvertedIndex build(std::span<const std::pair<std::string, std::string>> docs,
                               BM25Params params);

    double score(std::span<const std::string> query_tokens, const std::string& doc_id) const;

    ScoredList search(std::string_view query_text, size_t k) const;

    // Keep a weak pair iff its own document appears in the top-k result for
    // its query; zero-overlap pairs are unretrievable and always dropped.
    struct FilterStats {
        size_t kept = 0;
        size_t dropped = 0;
    };
    WeakDataset filter_weak(const WeakDataset& weak, size_t k, FilterStats* stats = nullptr,
                            int threads = 1) const;

    size_t num_docs() const { return doc_ids_.size(); }
    double avgdl() const { return avgdl_; }
    const BM25Params& params() const { return params_; }
    const std::vector<std::string>& doc_ids() const { return doc_ids_; }
    const std::vector<uint32_t>& doc_lengths() const { return doc_lengths_; }
    const std::map<std::string, std::vector<Posting>>& postings() const { return postings_; }
    bool contains(const std::string& doc_id) const;

    void save(const std::string& path) const;
    static InvertedIndex load(const std::string& path);

  private:
    double term_doc_score(const std::string& term, uint32_t doc_index) const;

    BM25Params params_;
    std::vector<std::string> doc_ids_;  // ascending; position is the doc index
    std::vector<uint32_t> doc_lengths_;
    std::map<std::string, std::vector<Posting>> postings_;
    double avgdl_ = 0.0;
};

// TREC exchange lines: "qid Q0 docid rank score tag".
std::string to_trec_lines(const std::string& query_id, const ScoredList& results,
                          const std::string& tag);

}  // namespace promptaug
