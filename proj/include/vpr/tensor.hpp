#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "vpr/errors.hpp"

namespace vpr {

using Shape = std::vector<int>;
using Array = Eigen::ArrayXd;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
    Shape shape;
    Array data;
    bool requires_grad = false;
    Array grad;  // size 0 until first touched

    void ensure_grad() {
        if (grad.size() != data.size()) grad = Array::Zero(data.size());
    }
    void accumulate_grad(const Array& g) {
        ensure_grad();
        grad += g;
    }
};

// Dense n-dimensional f64 array, row-major, participating in a reverse-mode
// gradient graph. Value-semantic handle over shared storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor ones(const Shape& shape, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor from_data(const Shape& shape, std::vector<double> values,
                            bool requires_grad = false);
    static Tensor from_array(const Shape& shape, Array values, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl().shape; }
    int ndim() const { return static_cast<int>(impl().shape.size()); }
    std::int64_t size() const { return impl().data.size(); }
    int extent(int axis) const { return impl().shape.at(static_cast<std::size_t>(axis)); }

    Array& array() { return impl().data; }
    const Array& array() const { return impl().data; }
    Array& grad_array() { return impl().grad; }
    const Array& grad_array() const { return impl().grad; }
    bool has_grad() const { return impl().grad.size() == impl().data.size(); }

    bool requires_grad() const { return impl().requires_grad; }
    void set_requires_grad(bool v) { impl().requires_grad = v; }
    void zero_grad() {
        impl().ensure_grad();
        impl().grad.setZero();
    }

    // Scalar fetch; the tensor must hold exactly one element.
    double value() const;

    double at(std::initializer_list<int> idx) const;
    void set(std::initializer_list<int> idx, double v);

    // Copy of the data with no grad tracking.
    Tensor detach() const;
    // Deep copy preserving requires_grad.
    Tensor clone() const;

    std::shared_ptr<TensorImpl> ptr() const { return impl_; }

private:
    TensorImpl& impl() {
        if (!impl_) throw ContractViolation("use of undefined tensor");
        return *impl_;
    }
    const TensorImpl& impl() const {
        if (!impl_) throw ContractViolation("use of undefined tensor");
        return *impl_;
    }

    std::shared_ptr<TensorImpl> impl_;
};

// Dynamic tape: an ordered record of executed operations. Ops append nodes
// during the forward pass while a graph is active on the current thread;
// backward() replays them once, in reverse execution order. A graph and its
// tensors are confined to one thread at a time.
class GradGraph {
public:
    GradGraph() = default;
    GradGraph(const GradGraph&) = delete;
    GradGraph& operator=(const GradGraph&) = delete;

    // RAII activation on the current thread. Nests; restores on destruction.
    class Scope {
    public:
        explicit Scope(GradGraph& g);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        GradGraph* prev_;
    };

    static GradGraph* current();

    void record(const Tensor& out, std::function<void()> backward);
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and walks the tape backwards. Grad buffers of
    // recorded outputs are reset first; leaf grads accumulate across calls.
    void backward(const Tensor& loss);

private:
    struct Node {
        std::shared_ptr<TensorImpl> out;
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
};

}  // namespace vpr
