#include "promptaug/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "promptaug/errors.hpp"
#include "promptaug/util.hpp"

namespace promptaug {

void Qrels::add(const std::string& query_id, const std::string& doc_id, int grade) {
    if (grade < 0) throw ContractError("qrels: negative grade for query " + query_id);
    data_[query_id][doc_id] = grade;
}

int Qrels::grade(const std::string& query_id, const std::string& doc_id) const {
    const auto qit = data_.find(query_id);
    if (qit == data_.end()) return 0;
    const auto dit = qit->second.find(doc_id);
    return dit == qit->second.end() ? 0 : dit->second;
}

bool Qrels::has_positive(const std::string& query_id) const {
    const auto qit = data_.find(query_id);
    if (qit == data_.end()) return false;
    for (const auto& [doc, grade] : qit->second) {
        if (grade > 0) return true;
    }
    return false;
}

void Qrels::merge(const Qrels& other) {
    for (const auto& [qid, docs] : other.data_) {
        for (const auto& [did, grade] : docs) data_[qid][did] = grade;
    }
}

Qrels Qrels::load_tsv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open qrels " + path);
    Qrels q;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string qid, did, grade_str;
        if (!std::getline(row, qid, '\t') || !std::getline(row, did, '\t') ||
            !std::getline(row, grade_str)) {
            throw IoError(path + ":" + std::to_string(line_no) + ": expected 3 tab-separated " +
                          "columns");
        }
        if (line_no == 1 && (qid == "query-id" || qid == "qid")) continue;  // header row
        try {
            q.add(qid, did, std::stoi(grade_str));
        } catch (const std::exception&) {
            throw IoError(path + ":" + std::to_string(line_no) + ": bad grade '" + grade_str +
                          "'");
        }
    }
    return q;
}

void Qrels::save_tsv(const std::string& path) const {
    std::string out = "query-id\tcorpus-id\tscore\n";
    for (const auto& [qid, docs] : data_) {
        for (const auto& [did, grade] : docs) {
            out += qid + "\t" + did + "\t" + std::to_string(grade) + "\n";
        }
    }
    write_text_file(path, out);
}

void Run::set(const std::string& query_id, ScoredList results) {
    for (size_t i = 1; i < results.size(); ++i) {
        const auto& prev = results[i - 1];
        const auto& cur = results[i];
        const bool ordered = prev.score > cur.score ||
                             (prev.score == cur.score && prev.doc_id < cur.doc_id);
        if (!ordered) {
            throw ContractError("run: results for query " + query_id +
                                " violate (score desc, doc_id asc) order");
        }
        if (prev.doc_id == cur.doc_id) {
            throw ContractError("run: duplicate doc " + cur.doc_id + " for query " + query_id);
        }
    }
    data_[query_id] = std::move(results);
}

Run Run::load_trec(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open run file " + path);
    std::map<std::string, ScoredList> raw;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string qid, q0, did, rank_str, score_str, tag;
        if (!(row >> qid >> q0 >> did >> rank_str >> score_str >> tag)) {
            throw IoError(path + ":" + std::to_string(line_no) + ": malformed TREC line");
        }
        raw[qid].push_back({did, std::stod(score_str)});
    }
    Run run;
    for (auto& [qid, results] : raw) {
        std::stable_sort(results.begin(), results.end(),
                         [](const ScoredDoc& a, const ScoredDoc& b) {
                             if (a.score != b.score) return a.score > b.score;
                             return a.doc_id < b.doc_id;
                         });
        run.set(qid, std::move(results));
    }
    return run;
}

void Run::save_trec(const std::string& path, const std::string& tag) const {
    std::string out;
    for (const auto& [qid, results] : data_) {
        out += to_trec_lines(qid, results, tag);
    }
    write_text_file(path, out);
}

namespace {

// Shared walk: the evaluated set is every qrels query with a positive grade.
// Queries the run never answered contribute zero; run-only queries are
// excluded and counted.
double mean_metric(const Run& run, const Qrels& qrels, MetricCounts* counts,
                   std::map<std::string, double>* per_query,
                   const std::function<double(const ScoredList&,
                                              const std::map<std::string, int>&)>& one_query) {
    MetricCounts local;
    double total = 0.0;
    static const ScoredList kEmpty;
    for (const auto& [qid, judged] : qrels.by_query()) {
        if (!qrels.has_positive(qid)) {
            ++local.excluded_no_positive;
            continue;
        }
        const auto rit = run.by_query().find(qid);
        const ScoredList* results = &kEmpty;
        if (rit == run.by_query().end()) {
            ++local.qrels_without_run;
        } else {
            results = &rit->second;
        }
        const double value = one_query(*results, judged);
        total += value;
        if (per_query != nullptr) (*per_query)[qid] = value;
        ++local.evaluated;
    }
    for (const auto& [qid, results] : run.by_query()) {
        if (qrels.by_query().find(qid) == qrels.by_query().end()) ++local.run_without_qrels;
    }
    if (counts != nullptr) *counts = local;
    if (local.evaluated == 0) return 0.0;
    return total / static_cast<double>(local.evaluated);
}

}  // namespace

double mrr_at_k(const Run& run, const Qrels& qrels, size_t k, MetricCounts* counts,
                std::map<std::string, double>* per_query) {
    if (k < 1) throw ContractError("mrr_at_k: k must be >= 1");
    return mean_metric(run, qrels, counts, per_query,
                       [k](const ScoredList& results, const std::map<std::string, int>& judged) {
                           const size_t depth = std::min(k, results.size());
                           for (size_t i = 0; i < depth; ++i) {
                               const auto it = judged.find(results[i].doc_id);
                               if (it != judged.end() && it->second > 0) {
                                   return 1.0 / static_cast<double>(i + 1);
                               }
                           }
                           return 0.0;
                       });
}

double ndcg_at_k(const Run& run, const Qrels& qrels, size_t k, MetricCounts* counts,
                 std::map<std::string, double>* per_query) {
    if (k < 1) throw ContractError("ndcg_at_k: k must be >= 1");
    return mean_metric(
        run, qrels, counts, per_query,
        [k](const ScoredList& results, const std::map<std::string, int>& judged) {
            double dcg = 0.0;
            const size_t depth = std::min(k, results.size());
            for (size_t i = 0; i < depth; ++i) {
                const auto it = judged.find(results[i].doc_id);
                if (it == judged.end() || it->second <= 0) continue;
                const double gain = std::pow(2.0, it->second) - 1.0;
                dcg += gain / std::log2(static_cast<double>(i) + 2.0);
            }
            std::vector<int> grades;
            for (const auto& [doc, grade] : judged) {
                if (grade > 0) grades.push_back(grade);
            }
            std::sort(grades.begin(), grades.end(), std::greater<int>());
            double idcg = 0.0;
            for (size_t i = 0; i < std::min(k, grades.size()); ++i) {
                idcg += (std::pow(2.0, grades[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
            }
            return idcg > 0.0 ? dcg / idcg : 0.0;
        });
}

double recall_at_k(const Run& run, const Qrels& qrels, size_t k, MetricCounts* counts,
                   std::map<std::string, double>* per_query) {
    if (k < 1) throw ContractError("recall_at_k: k must be >= 1");
    return mean_metric(run, qrels, counts, per_query,
                       [k](const ScoredList& results, const std::map<std::string, int>& judged) {
                           size_t relevant = 0;
                           for (const auto& [doc, grade] : judged) relevant += grade > 0 ? 1 : 0;
                           size_t hit = 0;
                           const size_t depth = std::min(k, results.size());
                           for (size_t i = 0; i < depth; ++i) {
                               const auto it = judged.find(results[i].doc_id);
                               if (it != judged.end() && it->second > 0) ++hit;
                           }
                           return static_cast<double>(hit) / static_cast<double>(relevant);
                       });
}

double map_score(const Run& run, const Qrels& qrels, MetricCounts* counts,
                 std::map<std::string, double>* per_query) {
    return mean_metric(run, qrels, counts, per_query,
                       [](const ScoredList& results, const std::map<std::string, int>& judged) {
                           size_t relevant = 0;
                           for (const auto& [doc, grade] : judged) relevant += grade > 0 ? 1 : 0;
                           double ap = 0.0;
                           size_t hits = 0;
                           for (size_t i = 0; i < results.size(); ++i) {
                               const auto it = judged.find(results[i].doc_id);
                               if (it != judged.end() && it->second > 0) {
                                   ++hits;
                                   ap += static_cast<double>(hits) / static_cast<double>(i + 1);
                               }
                           }
                           return ap / static_cast<double>(relevant);
                       });
}

nlohmann::json MetricReport::to_json() const {
    return {{"mrr@10", mrr10},
            {"ndcg@10", ndcg10},
            {"recall@100", recall100},
            {"map", map},
            {"counts",
             {{"evaluated", counts.evaluated},
              {"excluded_no_positive", counts.excluded_no_positive},
              {"run_without_qrels", counts.run_without_qrels},
              {"qrels_without_run", counts.qrels_without_run}}},
            {"per_query_ndcg@10", per_query_ndcg10}};
}

MetricReport evaluate_run(const Run& run, const Qrels& qrels) {
    MetricReport report;
    report.mrr10 = mrr_at_k(run, qrels, 10, &report.counts);
    report.ndcg10 = ndcg_at_k(run, qrels, 10, nullptr, &report.per_query_ndcg10);
    report.recall100 = recall_at_k(run, qrels, 100);
    report.map = map_score(run, qrels);
    return report;
}

}  // namespace promptaug
