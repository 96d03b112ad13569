#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "promptaug/tensor.hpp"

namespace promptaug {

// Reverse-mode tape. Ops append one node per forward call, so the recording
// order is a topological order of the computation; backward() walks it once in
// reverse. Ops also register every tensor they touch, which lets
// zero_gradients() reset the whole recorded graph (leaves and intermediates)
// so a second backward pass reproduces the first exactly. A tape is confined
// to one thread.
class Tape {
  public:
    using BackwardFn = std::function<void()>;

    void record(BackwardFn fn) { nodes_.push_back(std::move(fn)); }

    void touch(const Tensor& t) { touched_.push_back(t); }

    void backward() {
        for (size_t i = nodes_.size(); i > 0; --i) nodes_[i - 1]();
    }

    void zero_gradients() {
        for (Tensor& t : touched_) t.zero_grad();
    }

    size_t num_nodes() const { return nodes_.size(); }

    void clear() {
        nodes_.clear();
        touched_.clear();
    }

  private:
    std::vector<BackwardFn> nodes_;
    std::vector<Tensor> touched_;
};

}  // namespace promptaug
