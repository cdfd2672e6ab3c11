#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace har {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense row-major 64-bit float array with an optional gradient buffer.
///
/// Tensors double as nodes of a reverse-mode autodiff graph: operations in
/// ops.hpp/attention.hpp produce tensors whose `parents` and `backward_fn`
/// describe how to push gradients back. Leaves (inputs, parameters) have no
/// backward_fn.
class Tensor : public std::enable_shared_from_this<Tensor> {
public:
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;   // empty unless gradients are tracked
    bool requires_grad = false;

    // graph wiring, set by the op that produced this tensor
    std::vector<TensorPtr> parents;
    std::function<void()> backward_fn;

    Tensor() = default;
    Tensor(std::vector<std::size_t> shape_, bool requires_grad_);

    static TensorPtr create(std::vector<std::size_t> shape, bool requires_grad = false);
    static TensorPtr from_data(std::vector<std::size_t> shape, std::vector<double> values,
                               bool requires_grad = false);
    /// Scalar (shape {1}) convenience.
    static TensorPtr scalar(double value, bool requires_grad = false);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    /// Allocates the grad buffer (zero-filled) if absent.
    void ensure_grad();
    void zero_grad();

    bool is_scalar() const { return data.size() == 1; }
    bool all_finite() const;

    std::string shape_str() const;

private:
    bool backward_ran_ = false;
    friend void backward(const TensorPtr& loss);
};

/// Runs reverse-mode accumulation from a scalar loss node.
///
/// Seeds loss.grad with 1, topologically sorts the graph reachable through
/// `parents`, and invokes each node's backward_fn in reverse order. Calling
/// this twice on the same loss node without rebuilding the graph throws.
void backward(const TensorPtr& loss);

std::size_t shape_product(const std::vector<std::size_t>& shape);

/// Keeps large allocations on the heap instead of per-allocation mmap so the
/// graph buffers freed after every batch are reused, not refaulted. Call once
/// at process start in long-running entry points.
void tune_allocator();

/// Deterministic PRNG used everywhere randomness is needed. The raw engine is
/// std::mt19937_64 but all distributions are derived by hand so that streams
/// are identical across standard-library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    /// Uniform in [0, 1).
    double uniform();
    /// Uniform in [lo, hi).
    double uniform(double lo, double hi);
    /// Standard normal via Box-Muller.
    double normal();
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    /// Derives an independent seed for a sub-stream (splitmix64 mix).
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream);

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace har
