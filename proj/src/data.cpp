#include "promptaug/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "promptaug/errors.hpp"
#include "promptaug/rng.hpp"
#include "promptaug/util.hpp"

namespace promptaug {

namespace fs = std::filesystem;

std::string DatasetBundle::doc_text(const std::string& doc_id) const {
    const auto it = corpus.find(doc_id);
    if (it == corpus.end()) throw IndexError("bundle: unknown doc_id '" + doc_id + "'");
    if (it->second.title.empty()) return it->second.text;
    return it->second.title + " " + it->second.text;
}

std::vector<std::pair<std::string, std::string>> DatasetBundle::corpus_texts() const {
    std::vector<std::pair<std::string, std::string>> out;
    out.reserve(corpus.size());
    for (const auto& [id, rec] : corpus) out.emplace_back(id, doc_text(id));
    return out;
}

std::vector<std::pair<std::string, std::string>> DatasetBundle::unlabeled_texts() const {
    std::vector<std::pair<std::string, std::string>> out;
    out.reserve(unlabeled_doc_ids.size());
    for (const std::string& id : unlabeled_doc_ids) out.emplace_back(id, doc_text(id));
    return out;
}

void DatasetBundle::derive_unlabeled() {
    std::set<std::string> labeled;
    for (const Qrels* q : {&train_qrels, &eval_qrels, &test_qrels}) {
        for (const auto& [qid, docs] : q->by_query()) {
            for (const auto& [did, grade] : docs) labeled.insert(did);
        }
    }
    unlabeled_doc_ids.clear();
    for (const auto& [id, rec] : corpus) {
        if (labeled.find(id) == labeled.end()) unlabeled_doc_ids.push_back(id);
    }
}

void DatasetBundle::validate() const {
    std::vector<std::string> dangling;
    for (const Qrels* q : {&train_qrels, &eval_qrels, &test_qrels}) {
        for (const auto& [qid, docs] : q->by_query()) {
            if (queries.find(qid) == queries.end()) dangling.push_back("query " + qid);
            for (const auto& [did, grade] : docs) {
                if (corpus.find(did) == corpus.end()) dangling.push_back("doc " + did);
            }
        }
    }
    if (!dangling.empty()) {
        std::string msg = "bundle: qrels reference missing ids:";
        const size_t shown = std::min<size_t>(dangling.size(), 10);
        for (size_t i = 0; i < shown; ++i) msg += " " + dangling[i];
        if (dangling.size() > shown) {
            msg += " (+" + std::to_string(dangling.size() - shown) + " more)";
        }
        throw IoError(msg);
    }
    // No labeled document may sit in the unlabeled pool.
    std::set<std::string> pool(unlabeled_doc_ids.begin(), unlabeled_doc_ids.end());
    for (const Qrels* q : {&train_qrels, &eval_qrels, &test_qrels}) {
        for (const auto& [qid, docs] : q->by_query()) {
            for (const auto& [did, grade] : docs) {
                if (pool.count(did) > 0) {
                    throw ContractError("bundle: labeled doc '" + did +
                                        "' leaked into the unlabeled pool");
                }
            }
        }
    }
}

namespace {

nlohmann::json parse_jsonl_line(const std::string& line, const std::string& path,
                                size_t line_no) {
    try {
        return nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
}

}  // namespace

DatasetBundle load_beir(const std::string& dir) {
    DatasetBundle bundle;
    const std::string corpus_path = (fs::path(dir) / "corpus.jsonl").string();
    const std::string queries_path = (fs::path(dir) / "queries.jsonl").string();

    {
        std::ifstream in(corpus_path, std::ios::binary);
        if (!in) throw IoError("cannot open " + corpus_path);
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            const nlohmann::json j = parse_jsonl_line(line, corpus_path, line_no);
            DocRecord rec;
            rec.title = j.value("title", "");
            rec.text = j.at("text").get<std::string>();
            bundle.corpus[j.at("_id").get<std::string>()] = std::move(rec);
        }
    }
    {
        std::ifstream in(queries_path, std::ios::binary);
        if (!in) throw IoError("cannot open " + queries_path);
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            const nlohmann::json j = parse_jsonl_line(line, queries_path, line_no);
            bundle.queries[j.at("_id").get<std::string>()] = j.at("text").get<std::string>();
        }
    }

    const fs::path qrels_dir = fs::path(dir) / "qrels";
    auto load_split = [&](const char* name, Qrels& out) {
        const fs::path p = qrels_dir / (std::string(name) + ".tsv");
        if (!fs::exists(p)) {
            std::fprintf(stderr, "[data] warning: missing qrels split %s\n", p.string().c_str());
            return false;
        }
        out = Qrels::load_tsv(p.string());
        return true;
    };
    load_split("train", bundle.train_qrels);
    load_split("dev", bundle.eval_qrels);
    if (!load_split("test", bundle.test_qrels)) {
        if (bundle.eval_qrels.num_queries() > 0) {
            std::fprintf(stderr, "[data] note: test split absent, using dev as test\n");
            bundle.test_qrels = bundle.eval_qrels;
            bundle.eval_equals_test = true;
        }
    } else if (bundle.eval_qrels.by_query() == bundle.test_qrels.by_query()) {
        bundle.eval_equals_test = true;
    }

    bundle.derive_unlabeled();
    bundle.validate();
    return bundle;
}

void save_beir(const DatasetBundle& bundle, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "qrels");
    {
        std::string out;
        for (const auto& [id, rec] : bundle.corpus) {
            out += nlohmann::json{{"_id", id}, {"title", rec.title}, {"text", rec.text}}.dump();
            out.push_back('\n');
        }
        write_text_file((fs::path(dir) / "corpus.jsonl").string(), out);
    }
    {
        std::string out;
        for (const auto& [id, text] : bundle.queries) {
            out += nlohmann::json{{"_id", id}, {"text", text}}.dump();
            out.push_back('\n');
        }
        write_text_file((fs::path(dir) / "queries.jsonl").string(), out);
    }
    bundle.train_qrels.save_tsv((fs::path(dir) / "qrels" / "train.tsv").string());
    bundle.eval_qrels.save_tsv((fs::path(dir) / "qrels" / "dev.tsv").string());
    bundle.test_qrels.save_tsv((fs::path(dir) / "qrels" / "test.tsv").string());
}

namespace {

// Deterministic pronounceable pseudo-words: three syllables from a base-18
// alphabet, so word(i) != word(j) for i != j.
std::string pseudo_word(size_t n) {
    static const char* syllables[18] = {"ba", "de", "ki", "lo", "mu", "na", "po", "ri", "su",
                                        "ta", "ve", "wo", "za", "fe", "gi", "ho", "ju", "ce"};
    std::string w;
    for (int part = 0; part < 3; ++part) {
        w += syllables[n % 18];
        n /= 18;
    }
    return w;
}

struct SynthTemplate {
    const char* doc;    // with {adj} {noun} {key} {place} {mat} slots
    const char* query;  // the question embedded verbatim in the document
};

// FAQ-styled documents: each one embeds its own question behind a literal
// "query :" marker, the way scraped Q&A passages do. A causal LM pretrained on
// these learns that "query" is followed by the surrounding document's
// question, which is the exact completion the augmentor asks for.
const SynthTemplate kTemplates[4] = {
    {"the {adj} {noun} {key} is stored in the {place} depot . "
     "query : where is the {adj} {noun} {key} stored ? "
     "it is stored in the {place} depot near the {mat} crates .",
     "where is the {adj} {noun} {key} stored"},
    {"the {adj} {noun} {key} is made of {mat} . "
     "query : what is the {adj} {noun} {key} made of ? "
     "the {noun} {key} is made of {mat} from the {place} plant .",
     "what is the {adj} {noun} {key} made of"},
    {"people find the {adj} {noun} {key} at the {place} market . "
     "query : who sells the {adj} {noun} {key} ? "
     "the {place} market sells the {adj} {noun} {key} in {mat} boxes .",
     "who sells the {adj} {noun} {key}"},
    {"the {adj} {noun} {key} ships from the {place} yard . "
     "query : when does the {adj} {noun} {key} ship ? "
     "the {noun} {key} ships from the {place} yard in the {mat} season .",
     "when does the {adj} {noun} {key} ship"},
};

// Words the templates themselves contribute.
constexpr int kTemplateWordBudget = 40;

std::string fill_slots(std::string text, const std::string& adj, const std::string& noun,
                       const std::string& key, const std::string& place,
                       const std::string& mat) {
    auto replace_all = [&](const std::string& slot, const std::string& value) {
        size_t pos = 0;
        while ((pos = text.find(slot, pos)) != std::string::npos) {
            text.replace(pos, slot.size(), value);
            pos += value.size();
        }
    };
    replace_all("{adj}", adj);
    replace_all("{noun}", noun);
    replace_all("{key}", key);
    replace_all("{place}", place);
    replace_all("{mat}", mat);
    return text;
}

std::string padded_id(const char* prefix, size_t n) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%s%06zu", prefix, n);
    return std::string(buf);
}

}  // namespace

DatasetBundle make_synthetic(size_t n_docs, int n_templates, int vocab_size, uint64_t seed) {
    if (n_docs < 200) throw ConfigError("make_synthetic: n_docs must be >= 200");
    if (n_templates < 1 || n_templates > 4) {
        throw ConfigError("make_synthetic: n_templates must be in [1, 4]");
    }

    const size_t grid = static_cast<size_t>(std::ceil(std::sqrt(static_cast<double>(n_docs)))) + 1;
    const size_t n_place = 16, n_mat = 16;
    const size_t content_words = 2 * grid + n_place + n_mat + n_docs;
    if (static_cast<size_t>(vocab_size) < content_words + kTemplateWordBudget) {
        throw ConfigError("make_synthetic: vocab_size " + std::to_string(vocab_size) +
                          " too small for " + std::to_string(n_docs) +
                          " unique key terms (need >= " +
                          std::to_string(content_words + kTemplateWordBudget) + ")");
    }

    // Disjoint word pools carved out of one pseudo-word sequence.
    size_t cursor = 0;
    auto take = [&cursor](size_t count) {
        std::vector<std::string> words;
        words.reserve(count);
        for (size_t i = 0; i < count; ++i) words.push_back(pseudo_word(cursor++));
        return words;
    };
    const auto adjectives = take(grid);
    const auto nouns = take(grid);
    const auto places = take(n_place);
    const auto materials = take(n_mat);

    Rng rng(mix_seed(seed, 0x73796e7468ULL));
    // Unique (adj, noun) combination per document.
    std::vector<size_t> combos(grid * grid);
    for (size_t i = 0; i < combos.size(); ++i) combos[i] = i;
    rng.shuffle(combos);

    DatasetBundle bundle;
    std::vector<std::string> doc_ids;
    doc_ids.reserve(n_docs);
    for (size_t i = 0; i < n_docs; ++i) {
        const std::string adj = adjectives[combos[i] / grid];
        const std::string noun = nouns[combos[i] % grid];
        char keybuf[24];
        std::snprintf(keybuf, sizeof(keybuf), "key%05zu", i);
        const std::string key(keybuf);
        const std::string place = places[rng.next_below(n_place)];
        const std::string mat = materials[rng.next_below(n_mat)];
        const SynthTemplate& tpl =
            kTemplates[rng.next_below(static_cast<uint64_t>(n_templates))];

        const std::string doc_id = padded_id("d", i);
        const std::string query_id = padded_id("q", i);
        bundle.corpus[doc_id] = {"", fill_slots(tpl.doc, adj, noun, key, place, mat)};
        bundle.queries[query_id] = fill_slots(tpl.query, adj, noun, key, place, mat);
        doc_ids.push_back(doc_id);
    }

    // Carve train / eval / test query sets; everything else stays unlabeled.
    const size_t n_test = std::max<size_t>(30, n_docs / 10);
    const size_t n_eval = std::max<size_t>(20, n_docs / 20);
    const size_t n_train = std::max<size_t>(150, (n_docs * 175) / 1000);
    if (n_train + n_eval + n_test > n_docs) {
        throw ConfigError("make_synthetic: n_docs too small to carve train/eval/test splits");
    }
    std::vector<size_t> order(n_docs);
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    std::map<std::string, std::string> kept_queries;
    auto assign = [&](size_t from, size_t count, Qrels& qrels) {
        for (size_t i = from; i < from + count; ++i) {
            const std::string query_id = padded_id("q", order[i]);
            const std::string doc_id = padded_id("d", order[i]);
            qrels.add(query_id, doc_id, 1);
            kept_queries[query_id] = bundle.queries.at(query_id);
        }
    };
    assign(0, n_train, bundle.train_qrels);
    assign(n_train, n_eval, bundle.eval_qrels);
    assign(n_train + n_eval, n_test, bundle.test_qrels);
    bundle.queries = std::move(kept_queries);  // only split queries are exposed

    bundle.derive_unlabeled();
    bundle.validate();
    return bundle;
}

std::pair<SplitSample, SplitSample> sample_splits(const DatasetBundle& bundle, int x, int y,
                                                  uint64_t seed) {
    if (x < 1 || y < 1) throw ConfigError("sample_splits: X and Y must be >= 1");
    std::vector<std::string> qids;
    for (const auto& [qid, docs] : bundle.train_qrels.by_query()) {
        if (bundle.train_qrels.has_positive(qid)) qids.push_back(qid);
    }
    if (qids.size() < static_cast<size_t>(x + y)) {
        throw ConfigError("sample_splits: train split has " + std::to_string(qids.size()) +
                          " queries, need X+Y=" + std::to_string(x + y));
    }
    Rng rng(mix_seed(seed, 0x73706c6974ULL));
    rng.shuffle(qids);

    auto collect = [&](size_t from, size_t count, uint64_t split_seed) {
        SplitSample sample;
        sample.distinct_queries = static_cast<int>(count);
        sample.seed = split_seed;
        for (size_t i = from; i < from + count; ++i) {
            const std::string& qid = qids[i];
            for (const auto& [did, grade] : bundle.train_qrels.by_query().at(qid)) {
                if (grade <= 0) continue;
                sample.pairs.push_back(
                    {qid, did, bundle.queries.at(qid), bundle.doc_text(did)});
            }
        }
        return sample;
    };
    SplitSample train = collect(0, static_cast<size_t>(x), seed);
    SplitSample eval = collect(static_cast<size_t>(x), static_cast<size_t>(y), seed);
    return {std::move(train), std::move(eval)};
}

}  // namespace promptaug
