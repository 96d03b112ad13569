#include "promptaug/weak_data.hpp"

#include <fstream>

#include "promptaug/errors.hpp"
#include "promptaug/util.hpp"

namespace promptaug {

void WeakDataset::save_jsonl(const std::string& path) const {
    std::string out;
    for (const WeakPair& p : pairs) {
        nlohmann::json j{{"doc_id", p.doc_id},
                         {"query", p.query},
                         {"meta",
                          {{"prompt_fingerprint", p.prompt_fingerprint},
                           {"group_id", p.group_id},
                           {"seed", p.seed},
                           {"used_sampling_retry", p.used_sampling_retry}}}};
        out += j.dump();
        out.push_back('\n');
    }
    write_text_file(path, out);
    write_text_file(path + ".provenance.json", provenance.dump(2) + "\n");
}

WeakDataset WeakDataset::load_jsonl(const std::string& path) {
    WeakDataset ds;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open weak dataset " + path);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw IoError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        WeakPair p;
        p.doc_id = j.at("doc_id").get<std::string>();
        p.query = j.at("query").get<std::string>();
        const auto& meta = j.at("meta");
        p.prompt_fingerprint = meta.value("prompt_fingerprint", "");
        p.group_id = meta.value("group_id", "");
        p.seed = meta.value("seed", uint64_t{0});
        p.used_sampling_retry = meta.value("used_sampling_retry", false);
        ds.pairs.push_back(std::move(p));
    }
    std::ifstream prov(path + ".provenance.json", std::ios::binary);
    if (prov) {
        ds.provenance = nlohmann::json::parse(std::string(std::istreambuf_iterator<char>(prov),
                                                          std::istreambuf_iterator<char>()));
    }
    return ds;
}

}  // namespace promptaug
