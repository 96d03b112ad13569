#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "promptaug/tensor.hpp"

namespace promptaug {

// A named, optionally frozen tensor. The optimizer only ever writes to
// trainable parameters; gradients may still flow through frozen ones.
struct Parameter {
    Tensor tensor;
    bool trainable = true;
    std::string name;
};

struct AdamWConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.01f;
};

// Decoupled-weight-decay Adam with bias correction. Moment state is keyed by
// parameter name and zero-initialized on first sight. If any trainable
// gradient is non-finite the whole step is rejected: nothing is modified, the
// step counter does not advance, and a warning is emitted.
class AdamW {
  public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    bool step(std::span<Parameter> params);

    int64_t steps_taken() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }
    void set_lr(float lr) { cfg_.lr = lr; }

  private:
    struct Moments {
        std::vector<float> m;
        std::vector<float> v;
    };

    AdamWConfig cfg_;
    int64_t t_ = 0;
    std::unordered_map<std::string, Moments> moments_;
};

}  // namespace promptaug
