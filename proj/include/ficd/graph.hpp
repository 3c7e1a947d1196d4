#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ficd/tensor.hpp"

namespace ficd::ad {

enum class Op {
    Leaf,
    Conv3d,
    ConvTranspose3d,
    Linear,
    GroupNorm,
    Silu,
    Add,
    Mul,
    ChannelBias,
    Scale,
    Shift,
    ConcatChannels,
    SoftmaxLastDim,
    Bmm,
    MeanAll,
    SumAll,
    AbsVal,
    Square,
    Reshape,
    Permute,
};

const char* op_name(Op op);

struct OpAttrs {
    int stride = 1;
    int padding = 0;
    int groups = 1;
    double eps = 0.0;
    double scalar = 0.0;
    std::vector<int> perm;
};

// One recorded primitive application. Inputs refer to earlier nodes, so the
// tape order is a topological order and backward is a single reverse sweep.
struct Node {
    Op op = Op::Leaf;
    std::vector<int> inputs;
    Tensor value;
    OpAttrs attrs;
    std::vector<double> saved;   // op-specific activations (e.g. group-norm mean/rstd)
    std::vector<double> grad;    // allocated during backward
    bool needs_grad = false;
};

struct Value {
    int id = -1;
};

class Graph {
public:
    Value leaf(Tensor t);
    Value constant(Tensor t);  // leaf with requires_grad off

    const Tensor& value(Value v) const { return node(v).value; }
    const Shape& shape(Value v) const { return node(v).value.shape(); }

    // Gradient of the last backward() target w.r.t. node v.
    std::span<const double> grad(Value v) const;

    // Reverse sweep from a single-element output. Each node is visited exactly
    // once; leaves with requires_grad get their Tensor::grad populated
    // (zero-filled when unreachable from the output).
    void backward(Value scalar_output);

    size_t size() const { return nodes_.size(); }

    Value conv3d(Value x, Value w, int stride, int padding);
    Value conv_transpose3d(Value x, Value w, int stride, int padding);
    Value linear(Value x, Value w, Value b);
    Value group_norm(Value x, Value gamma, Value beta, int groups, double eps = 1e-5);
    Value silu(Value x);
    Value add(Value a, Value b);
    Value mul(Value a, Value b);
    Value channel_bias(Value x, Value b);
    Value scale(Value x, double s);
    Value shift(Value x, double s);
    Value concat_channels(Value a, Value b);
    Value softmax_lastdim(Value x);
    Value bmm(Value a, Value b);
    Value mean_all(Value x);
    Value sum_all(Value x);
    Value abs_val(Value x);
    Value square(Value x);
    Value reshape(Value x, Shape shape);
    Value permute(Value x, std::vector<int> perm);

    // sugar
    Value sub(Value a, Value b) { return add(a, scale(b, -1.0)); }

private:
    Node& node(Value v) { return nodes_[static_cast<size_t>(v.id)]; }
    const Node& node(Value v) const { return nodes_[static_cast<size_t>(v.id)]; }
    Value record(Op op, std::vector<int> inputs, Tensor value, OpAttrs attrs = {},
                 std::vector<double> saved = {});
    void backward_node(int id);

    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradCheckReport {
    bool pass = false;
    double max_rel_error = 0.0;
    int worst_input = -1;
    int64_t worst_coord = -1;
    bool finite = true;
    std::string message;
};

using ScalarFn = std::function<double(const std::vector<Tensor>&)>;
using AnalyticGradFn = std::function<std::vector<std::vector<double>>(const std::vector<Tensor>&)>;
using GraphFn = std::function<Value(Graph&, const std::vector<Value>&)>;

// Central-difference check of an externally supplied analytic gradient.
// Relative error per coordinate: |analytic - numeric| / max(1, |numeric|).
GradCheckReport gradient_check(const ScalarFn& f, const AnalyticGradFn& analytic,
                               const std::vector<Tensor>& point, double h, double tol);

// Convenience wrapper: the analytic gradient comes from Graph::backward of fn.
GradCheckReport gradient_check(const GraphFn& fn, const std::vector<Tensor>& point,
                               double h, double tol);

}  // namespace ficd::ad
