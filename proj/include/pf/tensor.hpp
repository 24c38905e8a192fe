#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "pf/common.hpp"
#include "pf/rng.hpp"

namespace pf {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

std::size_t numel(const std::vector<int>& shape);

// Dense row-major double tensor doubling as a reverse-mode autodiff node.
// Interior nodes keep their inputs alive through `parents`; `pull` scatters
// this node's gradient into the parents' gradient buffers.
class Tensor : public std::enable_shared_from_this<Tensor> {
public:
    std::vector<int> shape; // empty shape = scalar
    std::vector<double> values;
    std::vector<double> grad;
    bool needs_grad = false;
    std::vector<TensorPtr> parents;
    std::function<void(const Tensor&)> pull;

    static TensorPtr leaf(std::vector<int> shape, double fill = 0.0, bool needs_grad = false);
    static TensorPtr leaf(std::vector<int> shape, std::vector<double> values, bool needs_grad = false);
    static TensorPtr scalar(double v);
    static TensorPtr random_uniform(std::vector<int> shape, double lo, double hi, Rng& rng,
                                    bool needs_grad = false);

    std::size_t size() const { return values.size(); }
    bool is_leaf() const { return parents.empty(); }
    double item() const;
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

std::size_t flat_index(const std::vector<int>& shape, std::initializer_list<int> idx);

// elementwise, exact shape match
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr div(const TensorPtr& a, const TensorPtr& b);

// scalar broadcast
TensorPtr add(const TensorPtr& a, double s);
TensorPtr sub(const TensorPtr& a, double s);
TensorPtr mul(const TensorPtr& a, double s);
TensorPtr div(const TensorPtr& a, double s);

TensorPtr neg(const TensorPtr& a);
TensorPtr sqrt_op(const TensorPtr& a);
TensorPtr log_op(const TensorPtr& a);
TensorPtr clamp(const TensorPtr& a, double lo, double hi);

TensorPtr leaky_relu(const TensorPtr& a, double slope = 0.1);
TensorPtr sigmoid(const TensorPtr& a);
TensorPtr softmax(const TensorPtr& a, int axis);

// x: [Cin,H,W], kernel: [Cout,Cin,kh,kw]
TensorPtr conv2d(const TensorPtr& x, const TensorPtr& kernel, int stride, int padding);
// x: [C,H,W], bias: [C]
TensorPtr channel_bias(const TensorPtr& x, const TensorPtr& bias);

TensorPtr reshape(const TensorPtr& a, std::vector<int> shape);
TensorPtr permute(const TensorPtr& a, const std::vector<int>& axes);
TensorPtr slice(const TensorPtr& a, int axis, int start, int len);

enum class ReduceKind { Sum, Mean, Max };
TensorPtr reduce(const TensorPtr& a, ReduceKind kind, const std::vector<int>& axes);
TensorPtr reduce_sum(const TensorPtr& a);  // over all axes
TensorPtr reduce_mean(const TensorPtr& a); // over all axes
TensorPtr reduce_max(const TensorPtr& a);  // over all axes

// Reverse topological sweep from a scalar root. Interior gradients are
// rebuilt per call; leaf gradients accumulate until zero_grad().
void backward(const TensorPtr& root);

} // namespace pf
