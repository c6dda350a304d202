#include "vpr/tensor.hpp"

#include <sstream>
#include <utility>

namespace vpr {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw DimensionError("nonpositive extent in shape " + shape_str(shape));
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return from_array(shape, Array::Zero(numel(shape)), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    return from_array(shape, Array::Constant(numel(shape), value), requires_grad);
}

Tensor Tensor::ones(const Shape& shape, bool requires_grad) {
    return full(shape, 1.0, requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return full({1}, value, requires_grad);
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> values, bool requires_grad) {
    Array a = Eigen::Map<const Array>(values.data(), static_cast<Eigen::Index>(values.size()));
    return from_array(shape, std::move(a), requires_grad);
}

Tensor Tensor::from_array(const Shape& shape, Array values, bool requires_grad) {
    if (numel(shape) != values.size())
        throw DimensionError("data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = shape;
    t.impl_->data = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
}

double Tensor::value() const {
    if (size() != 1) throw ContractViolation("value() on non-scalar tensor " + shape_str(shape()));
    return impl().data(0);
}

namespace {
std::int64_t flat_index(const Shape& shape, std::initializer_list<int> idx) {
    if (static_cast<std::size_t>(idx.size()) != shape.size())
        throw DimensionError("index rank does not match tensor rank");
    std::int64_t flat = 0;
    std::size_t d = 0;
    for (int i : idx) {
        if (i < 0 || i >= shape[d]) throw DimensionError("index out of bounds");
        flat = flat * shape[d] + i;
        ++d;
    }
    return flat;
}
}  // namespace

double Tensor::at(std::initializer_list<int> idx) const {
    return impl().data(flat_index(impl().shape, idx));
}

void Tensor::set(std::initializer_list<int> idx, double v) {
    impl().data(flat_index(impl().shape, idx)) = v;
}

Tensor Tensor::detach() const {
    return from_array(shape(), array(), false);
}

Tensor Tensor::clone() const {
    return from_array(shape(), array(), requires_grad());
}

namespace {
thread_local GradGraph* g_active_graph = nullptr;
}

GradGraph::Scope::Scope(GradGraph& g) : prev_(g_active_graph) { g_active_graph = &g; }
GradGraph::Scope::~Scope() { g_active_graph = prev_; }

GradGraph* GradGraph::current() { return g_active_graph; }

void GradGraph::record(const Tensor& out, std::function<void()> backward) {
    nodes_.push_back(Node{out.ptr(), std::move(backward)});
}

void GradGraph::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw ContractViolation("backward: loss must be a scalar tensor");
    if (nodes_.empty()) throw ContractViolation("backward: graph is empty");

    // Intermediate grads are owned by this walk; leaves keep accumulating.
    for (auto& node : nodes_) {
        node.out->ensure_grad();
        node.out->grad.setZero();
    }
    loss.ptr()->ensure_grad();
    loss.ptr()->grad.setConstant(1.0);

    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        it->backward();
    }
}

}  // namespace vpr
