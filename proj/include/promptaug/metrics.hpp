#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptaug/bm25.hpp"

namespace promptaug {

// Relevance judgments. Grades are non-negative; grade 0 entries are kept (they
// are explicit negatives) but only positive grades make a query evaluable.
class Qrels {
  public:
    void add(const std::string& query_id, const std::string& doc_id, int grade);

    int grade(const std::string& query_id, const std::string& doc_id) const;

    const std::map<std::string, std::map<std::string, int>>& by_query() const { return data_; }

    bool has_positive(const std::string& query_id) const;

    size_t num_queries() const { return data_.size(); }

    void merge(const Qrels& other);

    // BEIR-style TSV: query-id <tab> corpus-id <tab> score, header tolerated.
    static Qrels load_tsv(const std::string& path);
    void save_tsv(const std::string& path) const;

  private:
    std::map<std::string, std::map<std::string, int>> data_;
};

// Ranked results per query; rows are kept strictly in (score desc, doc_id asc)
// order with no duplicate documents.
class Run {
  public:
    void set(const std::string& query_id, ScoredList results);

    const std::map<std::string, ScoredList>& by_query() const { return data_; }

    static Run load_trec(const std::string& path);
    void save_trec(const std::string& path, const std::string& tag) const;

  private:
    std::map<std::string, ScoredList> data_;
};

// Exclusion bookkeeping reported next to every metric.
struct MetricCounts {
    int evaluated = 0;
    int excluded_no_positive = 0;   // qrels queries with no positive grade
    int run_without_qrels = 0;      // run queries with no qrels entry
    int qrels_without_run = 0;      // evaluable queries the run never answered
};

double mrr_at_k(const Run& run, const Qrels& qrels, size_t k = 10,
                MetricCounts* counts = nullptr,
                std::map<std::string, double>* per_query = nullptr);

// Gain 2^grade - 1, discount 1/log2(rank+1), normalized by the ideal DCG of
// the query's judged grades (the trec_eval/BEIR convention).
double ndcg_at_k(const Run& run, const Qrels& qrels, size_t k = 10,
                 MetricCounts* counts = nullptr,
                 std::map<std::string, double>* per_query = nullptr);

double recall_at_k(const Run& run, const Qrels& qrels, size_t k = 100,
                   MetricCounts* counts = nullptr,
                   std::map<std::string, double>* per_query = nullptr);

double map_score(const Run& run, const Qrels& qrels, MetricCounts* counts = nullptr,
                 std::map<std::string, double>* per_query = nullptr);

struct MetricReport {
    double mrr10 = 0.0;
    double ndcg10 = 0.0;
    double recall100 = 0.0;
    double map = 0.0;
    MetricCounts counts;
    std::map<std::string, double> per_query_ndcg10;

    nlohmann::json to_json() const;
};

MetricReport evaluate_run(const Run& run, const Qrels& qrels);

}  // namespace promptaug
