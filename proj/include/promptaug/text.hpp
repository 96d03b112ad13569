#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace promptaug {

// The one analyzer shared by vocabulary building and BM25 indexing:
// lowercase, split on any non-alphanumeric byte. Version tag travels with
// serialized indexes so a loaded index can refuse mismatched queries.
inline constexpr const char* kAnalyzerVersion = "lower-alnum-v1";

std::vector<std::string> analyze(std::string_view text);

std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace promptaug
