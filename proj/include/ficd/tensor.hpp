#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ficd/rng.hpp"

namespace ficd::ad {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense n-dimensional array of doubles, row-major (last axis fastest).
// Payload is shared between copies; mutation copies-on-write, so completed
// tensors can be handed to a graph while the owner keeps updating its copy.
class Tensor {
public:
    Tensor() : data_(std::make_shared<std::vector<double>>()) {}
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value) { return Tensor({1}, {value}); }
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);
    static Tensor normal(Shape shape, Rng& rng);

    const Shape& shape() const { return shape_; }
    int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
    int64_t numel() const { return static_cast<int64_t>(data_->size()); }
    int64_t dim(int64_t axis) const { return shape_[static_cast<size_t>(axis)]; }

    std::span<const double> data() const { return {data_->data(), data_->size()}; }
    std::span<double> mutable_data();

    double item() const;
    bool all_finite() const;

    // Same payload viewed under a different shape (numel must match).
    Tensor with_shape(Shape shape) const;

    bool requires_grad = false;

    // Populated by Graph::backward on leaves; same shape as data.
    std::shared_ptr<std::vector<double>> grad;

private:
    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
};

}  // namespace ficd::ad
