#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace promptaug {

// Incremental FNV-1a 64-bit hash; used for config hashes and parameter
// fingerprints. Stable across platforms.
class Fnv1a {
  public:
    Fnv1a& update(const void* data, size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            hash_ ^= bytes[i];
            hash_ *= 0x100000001b3ULL;
        }
        return *this;
    }

    Fnv1a& update(std::string_view s) { return update(s.data(), s.size()); }

    template <typename T>
    Fnv1a& update_value(const T& v) {
        return update(&v, sizeof(T));
    }

    uint64_t digest() const { return hash_; }

  private:
    uint64_t hash_ = 0xcbf29ce484222325ULL;
};

std::string hex64(uint64_t v);

// Static partition of [0, n) over at most `threads` workers. fn(i) must be
// independent per index; results should be written to index-addressed slots so
// the outcome is identical for any thread count.
void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn);

int resolve_threads(int requested);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view content);

// Shortest float formatting that round-trips a float32; deterministic.
std::string format_float(float v);
std::string format_double(double v);

}  // namespace promptaug
