#include "ficd/tensor.hpp"

#include <cmath>
#include <sstream>

#include "ficd/errors.hpp"

namespace ficd::ad {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    for (int64_t d : shape_) {
        if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(shape_));
    }
    data_ = std::make_shared<std::vector<double>>(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
    if (shape_numel(shape_) != static_cast<int64_t>(values.size())) {
        throw ShapeError("tensor payload size " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape_));
    }
    data_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    for (double& v : *t.data_) v = value;
    return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& v : *t.data_) v = lo + (hi - lo) * rng.uniform();
    return t;
}

Tensor Tensor::normal(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : *t.data_) v = rng.normal();
    return t;
}

std::span<double> Tensor::mutable_data() {
    if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
    return {data_->data(), data_->size()};
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() requires a single-element tensor, shape " + shape_str(shape_));
    return (*data_)[0];
}

bool Tensor::all_finite() const {
    for (double v : *data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor Tensor::with_shape(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw ShapeError("with_shape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

}  // namespace ficd::ad
