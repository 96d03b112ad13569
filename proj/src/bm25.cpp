#include "promptaug/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "promptaug/errors.hpp"
#include "promptaug/text.hpp"
#include "promptaug/util.hpp"

namespace promptaug {

InvertedIndex InvertedIndex::build(std::span<const std::pair<std::string, std::string>> docs,
                                   BM25Params params) {
    if (docs.empty()) throw ConfigError("bm25 build: empty corpus");
    InvertedIndex index;
    index.params_ = params;

    // Ascending doc_id defines the internal doc index, which makes the
    // required tie order a plain index comparison.
    index.doc_ids_.reserve(docs.size());
    for (const auto& [id, text] : docs) index.doc_ids_.push_back(id);
    std::sort(index.doc_ids_.begin(), index.doc_ids_.end());
    index.doc_ids_.erase(std::unique(index.doc_ids_.begin(), index.doc_ids_.end()),
                         index.doc_ids_.end());
    if (index.doc_ids_.size() != docs.size()) {
        throw ConfigError("bm25 build: duplicate doc_id in corpus");
    }
    auto doc_index_of = [&](const std::string& id) {
        return static_cast<uint32_t>(
            std::lower_bound(index.doc_ids_.begin(), index.doc_ids_.end(), id) -
            index.doc_ids_.begin());
    };

    index.doc_lengths_.assign(index.doc_ids_.size(), 0);
    uint64_t total_len = 0;
    std::map<std::string, std::map<uint32_t, uint32_t>> acc;
    for (const auto& [id, text] : docs) {
        const uint32_t di = doc_index_of(id);
        const auto tokens = analyze(text);
        index.doc_lengths_[di] = static_cast<uint32_t>(tokens.size());
        total_len += tokens.size();
        for (const std::string& t : tokens) ++acc[t][di];
    }
    if (total_len == 0) throw ConfigError("bm25 build: corpus has no tokens");
    index.avgdl_ = static_cast<double>(total_len) / static_cast<double>(index.doc_ids_.size());

    for (auto& [term, by_doc] : acc) {
        auto& plist = index.postings_[term];
        plist.reserve(by_doc.size());
        for (const auto& [di, tf] : by_doc) plist.emplace_back(di, tf);
    }
    return index;
}

double InvertedIndex::term_doc_score(const std::string& term, uint32_t doc_index) const {
    const auto it = postings_.find(term);
    if (it == postings_.end()) return 0.0;
    const auto& plist = it->second;
    const auto pit = std::lower_bound(
        plist.begin(), plist.end(), doc_index,
        [](const Posting& p, uint32_t di) { return p.first < di; });
    if (pit == plist.end() || pit->first != doc_index) return 0.0;

    const double n = static_cast<double>(doc_ids_.size());
    const double df = static_cast<double>(plist.size());
    const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    const double tf = static_cast<double>(pit->second);
    const double len = static_cast<double>(doc_lengths_[doc_index]);
    const double sat =
        tf * (params_.k1 + 1.0) / (tf + params_.k1 * (1.0 - params_.b + params_.b * len / avgdl_));
    return idf * sat;
}

bool InvertedIndex::contains(const std::string& doc_id) const {
    return std::binary_search(doc_ids_.begin(), doc_ids_.end(), doc_id);
}

double InvertedIndex::score(std::span<const std::string> query_tokens,
                            const std::string& doc_id) const {
    const auto it = std::lower_bound(doc_ids_.begin(), doc_ids_.end(), doc_id);
    if (it == doc_ids_.end() || *it != doc_id) {
        throw IndexError("bm25 score: unknown doc_id '" + doc_id + "'");
    }
    const uint32_t di = static_cast<uint32_t>(it - doc_ids_.begin());
    double total = 0.0;
    for (const std::string& t : query_tokens) total += term_doc_score(t, di);
    return total;
}

ScoredList InvertedIndex::search(std::string_view query_text, size_t k) const {
    if (k < 1) throw ConfigError("bm25 search: k must be >= 1");
    const std::vector<std::string> tokens = analyze(query_text);
    if (tokens.empty()) return {};

    std::set<uint32_t> candidates;
    {
        std::set<std::string> unique(tokens.begin(), tokens.end());
        for (const std::string& t : unique) {
            const auto it = postings_.find(t);
            if (it == postings_.end()) continue;
            for (const Posting& p : it->second) candidates.insert(p.first);
        }
    }

    // Same accumulation order as score() so the two routes agree bit-for-bit.
    ScoredList scored;
    scored.reserve(candidates.size());
    for (uint32_t di : candidates) {
        double total = 0.0;
        for (const std::string& t : tokens) total += term_doc_score(t, di);
        if (total > 0.0) scored.push_back({doc_ids_[di], total});
    }
    std::sort(scored.begin(), scored.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc_id < b.doc_id;
    });
    if (scored.size() > k) scored.resize(k);
    return scored;
}

WeakDataset InvertedIndex::filter_weak(const WeakDataset& weak, size_t k, FilterStats* stats,
                                       int threads) const {
    if (k < 1) throw ConfigError("filter_weak: k must be >= 1");
    std::vector<uint8_t> keep(weak.pairs.size(), 0);
    parallel_for(weak.pairs.size(), threads, [&](size_t i) {
        const WeakPair& pair = weak.pairs[i];
        for (const ScoredDoc& hit : search(pair.query, k)) {
            if (hit.doc_id == pair.doc_id) {
                keep[i] = 1;
                break;
            }
        }
    });
    WeakDataset out;
    out.provenance = weak.provenance;
    out.provenance["filter_top_k"] = k;
    for (size_t i = 0; i < weak.pairs.size(); ++i) {
        if (keep[i]) out.pairs.push_back(weak.pairs[i]);
    }
    if (stats != nullptr) {
        stats->kept = out.pairs.size();
        stats->dropped = weak.pairs.size() - out.pairs.size();
    }
    out.provenance["kept"] = out.pairs.size();
    out.provenance["dropped"] = weak.pairs.size() - out.pairs.size();
    return out;
}

void InvertedIndex::save(const std::string& path) const {
    nlohmann::json j;
    j["kind"] = "inverted_index";
    j["version"] = 1;
    j["analyzer"] = kAnalyzerVersion;
    j["params"] = params_.to_json();
    j["doc_ids"] = doc_ids_;
    j["doc_lengths"] = doc_lengths_;
    nlohmann::json plist = nlohmann::json::object();
    for (const auto& [term, postings] : postings_) {
        nlohmann::json arr = nlohmann::json::array();
        for (const Posting& p : postings) arr.push_back({p.first, p.second});
        plist[term] = std::move(arr);
    }
    j["postings"] = std::move(plist);
    write_text_file(path, j.dump());
}

InvertedIndex InvertedIndex::load(const std::string& path) {
    const nlohmann::json j = nlohmann::json::parse(read_text_file(path));
    if (j.value("kind", "") != "inverted_index") {
        throw IoError("not an index file: " + path);
    }
    if (j.value("analyzer", "") != kAnalyzerVersion) {
        throw ConfigError("index analyzer mismatch in " + path);
    }
    InvertedIndex index;
    index.params_ = BM25Params::from_json(j.at("params"));
    index.doc_ids_ = j.at("doc_ids").get<std::vector<std::string>>();
    index.doc_lengths_ = j.at("doc_lengths").get<std::vector<uint32_t>>();
    uint64_t total = 0;
    for (uint32_t len : index.doc_lengths_) total += len;
    index.avgdl_ = static_cast<double>(total) / static_cast<double>(index.doc_ids_.size());
    for (const auto& [term, arr] : j.at("postings").items()) {
        auto& plist = index.postings_[term];
        for (const auto& entry : arr) {
            plist.emplace_back(entry.at(0).get<uint32_t>(), entry.at(1).get<uint32_t>());
        }
    }
    return index;
}

std::string to_trec_lines(const std::string& query_id, const ScoredList& results,
                          const std::string& tag) {
    std::string out;
    char buf[64];
    for (size_t rank = 0; rank < results.size(); ++rank) {
        std::snprintf(buf, sizeof(buf), "%.6f", results[rank].score);
        out += query_id;
        out += " Q0 ";
        out += results[rank].doc_id;
        out += ' ';
        out += std::to_string(rank + 1);
        out += ' ';
        out += buf;
        out += ' ';
        out += tag;
        out += '\n';
    }
    return out;
}

}  // namespace promptaug
