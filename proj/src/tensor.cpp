#include "har/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace har {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t p = 1;
    for (std::size_t e : shape) p *= e;
    return p;
}

void tune_allocator() {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, std::numeric_limits<int>::max());
#endif
}

Tensor::Tensor(std::vector<std::size_t> shape_, bool requires_grad_)
    : shape(std::move(shape_)), requires_grad(requires_grad_) {
    for (std::size_t e : shape) {
        if (e == 0) throw std::invalid_argument("Tensor: zero extent in shape " + shape_str());
    }
    data.assign(shape_product(shape), 0.0);
    if (requires_grad) grad.assign(data.size(), 0.0);
}

TensorPtr Tensor::create(std::vector<std::size_t> shape, bool requires_grad) {
    return std::make_shared<Tensor>(std::move(shape), requires_grad);
}

TensorPtr Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> values,
                            bool requires_grad) {
    auto t = std::make_shared<Tensor>(std::move(shape), requires_grad);
    if (values.size() != t->data.size()) {
        throw std::invalid_argument("Tensor: " + std::to_string(values.size()) +
                                    " values do not fill shape " + t->shape_str());
    }
    t->data = std::move(values);
    return t;
}

TensorPtr Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    std::fill(grad.begin(), grad.end(), 0.0);
    backward_ran_ = false;
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void topo_visit(const TensorPtr& node, std::unordered_set<const Tensor*>& done,
                std::unordered_set<const Tensor*>& in_progress, std::vector<TensorPtr>& order) {
    if (done.count(node.get())) return;
    if (in_progress.count(node.get())) {
        throw std::runtime_error("backward: cycle detected in computation graph");
    }
    in_progress.insert(node.get());
    for (const TensorPtr& p : node->parents) {
        if (!p) throw std::runtime_error("backward: missing parent node");
        topo_visit(p, done, in_progress, order);
    }
    in_progress.erase(node.get());
    done.insert(node.get());
    order.push_back(node);
}

}  // namespace

void backward(const TensorPtr& loss) {
    if (!loss) throw std::invalid_argument("backward: null loss node");
    if (!loss->is_scalar()) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " + loss->shape_str());
    }
    if (loss->backward_ran_) {
        throw std::runtime_error("backward: already ran on this node; rebuild the graph or zero_grad first");
    }
    loss->backward_ran_ = true;

    std::unordered_set<const Tensor*> done, in_progress;
    std::vector<TensorPtr> order;
    topo_visit(loss, done, in_progress, order);

    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn();
    }
}

double Rng::uniform() {
    // 53 random bits -> [0,1)
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    // rejection sampling keeps the draw unbiased
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = eng_();
    } while (x >= limit);
    return x % n;
}

std::uint64_t Rng::mix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace har
