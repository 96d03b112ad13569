#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace promptaug {

// One labeled document-query pair, carried with its texts so downstream
// stages never need to re-join against the corpus.
struct PairRef {
    std::string query_id;
    std::string doc_id;
    std::string query_text;
    std::string doc_text;
};

// A sampled split: X (or Y) distinct queries with all their positive
// documents, so pairs.size() == NumPair(X) >= X.
struct SplitSample {
    std::vector<PairRef> pairs;
    int distinct_queries = 0;
    uint64_t seed = 0;
};

}  // namespace promptaug
