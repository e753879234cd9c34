#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "ddlm/errors.hpp"

namespace ddlm {

// Element type. The default build trains in 32-bit; defining DDLM_REAL_DOUBLE
// switches the whole library to 64-bit, used only for tighter gradient checks.
#ifdef DDLM_REAL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int e : s) {
        if (e < 0) throw ShapeError("negative extent in shape " + shape_str(s));
        n *= size_t(e);
    }
    return n;
}

struct TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

// One node of the recorded computation. Outputs link back to their inputs,
// never forward, so the reachable graph is acyclic by construction.
struct TensorImpl {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;  // allocated lazily, same shape as data
    bool requires_grad = false;

    // Set by ops when grad recording is on: inputs plus the rule that maps
    // this node's grad into its parents' grads (accumulating).
    std::vector<ImplPtr> parents;
    std::function<void(TensorImpl&)> backward_fn;

    // Scalar reductions also keep their double-precision accumulator; the
    // finite-difference harness reads it to cut subtractive cancellation.
    double scalar_f64 = 0.0;
    bool has_scalar_f64 = false;

    size_t numel() const { return data.size(); }

    std::vector<Real>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), Real(0));
        return grad;
    }
};

namespace autograd {

inline bool& recording_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool recording() { return recording_flag(); }

// Scoped "inference mode": ops inside the scope record no graph.
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(recording_flag()) { recording_flag() = false; }
    ~NoGradGuard() { recording_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

}  // namespace autograd

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(ImplPtr impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto impl = std::make_shared<TensorImpl>();
        impl->data.assign(shape_numel(shape), Real(0));
        impl->shape = std::move(shape);
        impl->requires_grad = requires_grad;
        return Tensor(impl);
    }

    static Tensor full(Shape shape, Real value) {
        Tensor t = zeros(std::move(shape));
        for (auto& v : t.data()) v = value;
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<Real> values, bool requires_grad = false) {
        if (shape_numel(shape) != values.size())
            throw ShapeError("from_data: shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
        auto impl = std::make_shared<TensorImpl>();
        impl->shape = std::move(shape);
        impl->data = std::move(values);
        impl->requires_grad = requires_grad;
        return Tensor(impl);
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int dim(int i) const {
        int r = int(impl_->shape.size());
        return impl_->shape[size_t(i < 0 ? r + i : i)];
    }
    int rank() const { return int(impl_->shape.size()); }
    size_t numel() const { return impl_->numel(); }

    std::vector<Real>& data() { return impl_->data; }
    const std::vector<Real>& data() const { return impl_->data; }
    std::vector<Real>& grad() { return impl_->ensure_grad(); }
    bool has_grad() const { return !impl_->grad.empty(); }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), Real(0));
    }

    Real item() const {
        if (numel() != 1) throw UsageError("item: tensor " + shape_str(shape()) + " is not scalar");
        return impl_->data[0];
    }

    // Double-precision value of a scalar; exact accumulator where the
    // producing op kept one, otherwise the stored element widened.
    double item_f64() const {
        if (numel() != 1) throw UsageError("item_f64: tensor " + shape_str(shape()) + " is not scalar");
        return impl_->has_scalar_f64 ? impl_->scalar_f64 : double(impl_->data[0]);
    }

    ImplPtr impl() const { return impl_; }
    TensorImpl* raw() const { return impl_.get(); }

    // Reverse-mode sweep from a scalar. Grads accumulate; callers that want
    // fresh gradients zero them first.
    void backward() const {
        if (!defined() || numel() != 1)
            throw UsageError("backward: loss must be a scalar tensor");
        // Iterative post-order over the recorded graph.
        std::vector<TensorImpl*> topo;
        std::unordered_set<TensorImpl*> visited;
        struct Frame {
            TensorImpl* node;
            size_t next_parent;
        };
        std::vector<Frame> stack;
        stack.push_back({impl_.get(), 0});
        visited.insert(impl_.get());
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next_parent < f.node->parents.size()) {
                TensorImpl* p = f.node->parents[f.next_parent++].get();
                if (visited.insert(p).second) stack.push_back({p, 0});
            } else {
                topo.push_back(f.node);
                stack.pop_back();
            }
        }
        impl_->ensure_grad()[0] += Real(1);
        for (size_t i = topo.size(); i-- > 0;) {
            TensorImpl* node = topo[i];
            if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
        }
    }

private:
    ImplPtr impl_;
};

namespace detail {

// Wire an op result into the graph when recording is on and any input
// carries gradient history.
inline void record(Tensor& out, std::vector<Tensor> inputs,
                   std::function<void(TensorImpl&)> backward_fn) {
    if (!autograd::recording()) return;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return;
    out.impl()->requires_grad = true;
    out.impl()->parents.reserve(inputs.size());
    for (auto& in : inputs) out.impl()->parents.push_back(in.impl());
    out.impl()->backward_fn = std::move(backward_fn);
}

}  // namespace detail

}  // namespace ddlm
