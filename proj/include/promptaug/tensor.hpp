#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "promptaug/errors.hpp"

namespace promptaug {

// Dense row-major float32 tensor. Copying a Tensor copies the handle, not the
// buffer; clone() makes a deep copy. The gradient buffer is allocated lazily
// the first time grad() is touched so inference paths never pay for it.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<size_t> shape) : data_(std::make_shared<Data>()) {
        data_->shape = std::move(shape);
        data_->values.assign(count(data_->shape), 0.0f);
    }

    Tensor(std::vector<size_t> shape, std::vector<float> values)
        : data_(std::make_shared<Data>()) {
        if (count(shape) != values.size()) {
            throw DimensionError("tensor: " + std::to_string(values.size()) +
                                 " values do not fill shape " + shape_string(shape));
        }
        data_->shape = std::move(shape);
        data_->values = std::move(values);
    }

    static Tensor zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor scalar(float v) { return Tensor({1}, {v}); }

    bool defined() const { return data_ != nullptr; }

    const std::vector<size_t>& shape() const { return data_->shape; }

    size_t rank() const { return data_->shape.size(); }

    size_t dim(size_t i) const { return data_->shape.at(i); }

    size_t numel() const { return data_->values.size(); }

    std::span<float> values() { return data_->values; }
    std::span<const float> values() const { return data_->values; }

    float* data() { return data_->values.data(); }
    const float* data() const { return data_->values.data(); }

    float item() const {
        if (numel() != 1) throw DimensionError("item() on tensor with numel != 1");
        return data_->values[0];
    }

    bool has_grad() const { return defined() && !data_->grad.empty(); }

    // Allocates a zero gradient buffer on first use.
    std::span<float> grad() {
        if (data_->grad.empty()) data_->grad.assign(data_->values.size(), 0.0f);
        return data_->grad;
    }

    std::span<const float> grad() const {
        if (data_->grad.empty()) throw ContractError("grad() read before any backward pass");
        return data_->grad;
    }

    void zero_grad() {
        if (!data_->grad.empty()) data_->grad.assign(data_->values.size(), 0.0f);
    }

    void drop_grad() { data_->grad.clear(); }

    Tensor clone() const {
        Tensor out;
        out.data_ = std::make_shared<Data>();
        out.data_->shape = data_->shape;
        out.data_->values = data_->values;
        return out;
    }

    // Deep copy of the gradient buffer as a standalone tensor.
    Tensor clone_grad_as_tensor() const {
        if (!has_grad()) throw ContractError("clone_grad_as_tensor: no gradient present");
        Tensor out;
        out.data_ = std::make_shared<Data>();
        out.data_->shape = data_->shape;
        out.data_->values = data_->grad;
        return out;
    }

    // Stable identity of the underlying buffer, for aliasing checks.
    const void* id() const { return data_.get(); }

    bool same_shape(const Tensor& other) const { return data_->shape == other.data_->shape; }

    static std::string shape_string(const std::vector<size_t>& shape) {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i > 0) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

    std::string shape_string() const { return shape_string(data_->shape); }

  private:
    struct Data {
        std::vector<size_t> shape;
        std::vector<float> values;
        std::vector<float> grad;
    };

    static size_t count(const std::vector<size_t>& shape) {
        size_t n = 1;
        for (size_t d : shape) n *= d;
        return n;
    }

    std::shared_ptr<Data> data_;
};

}  // namespace promptaug
