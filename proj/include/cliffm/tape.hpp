#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "cliffm/tensor.hpp"

namespace cliffm {

enum class Mode { Train, Eval };

// Trainable tensor plus its gradient accumulator. `decay` marks tensors that
// receive decoupled weight decay (conv/linear weights; never biases, norm
// affines or layer scales).
template <typename T>
struct Param {
    TensorT<T> value;
    TensorT<T> grad;
    bool decay = false;

    Param() = default;
    explicit Param(TensorT<T> v, bool wd = false) : value(std::move(v)), decay(wd) {}

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.v.begin(), grad.v.end(), T(0));
    }
    void ensure_grad() {
        if (grad.empty()) grad = TensorT<T>::zeros(value.shape);
    }
};

// Reverse-mode tape. One tape per forward pass; nodes are appended in
// execution order, so reverse iteration is a valid topological order.
template <typename T>
class Tape {
public:
    struct Var {
        i64 i = -1;
        bool valid() const { return i >= 0; }
    };

    explicit Tape(bool grad_enabled = true, bool check_finite = false)
        : grad_enabled_(grad_enabled), check_finite_(check_finite) {}

    bool grad_enabled() const { return grad_enabled_; }
    bool check_finite() const { return check_finite_; }

    const TensorT<T>& val(Var v) const { return nodes_[static_cast<size_t>(v.i)].value; }
    bool needs_grad(Var v) const {
        return grad_enabled_ && nodes_[static_cast<size_t>(v.i)].needs_grad;
    }

    TensorT<T>& grad(Var v) {
        Node& n = nodes_[static_cast<size_t>(v.i)];
        if (n.grad.empty()) n.grad = TensorT<T>::zeros(n.value.shape);
        return n.grad;
    }

    Var constant(TensorT<T> v) { return push(std::move(v), false, nullptr); }

    Var input(TensorT<T> v, bool requires_grad) {
        return push(std::move(v), grad_enabled_ && requires_grad, nullptr);
    }

    // Leaf bound to an external parameter; backward flushes into p.grad.
    Var param(Param<T>& p) {
        if (!grad_enabled_) return constant(p.value);
        Param<T>* pp = &p;
        Var v = push(p.value, true, nullptr);
        nodes_[static_cast<size_t>(v.i)].backward = [v, pp](Tape& t) {
            pp->ensure_grad();
            accumulate(pp->grad, t.grad(v));
        };
        return v;
    }

    // General op node. `backward` reads grad(out) and accumulates into parents.
    Var make(TensorT<T> value, std::initializer_list<Var> parents,
             std::function<void(Tape&, Var)> backward, const char* op_name = "op") {
        return make(std::move(value), std::vector<Var>(parents), std::move(backward), op_name);
    }

    Var make(TensorT<T> value, const std::vector<Var>& parents,
             std::function<void(Tape&, Var)> backward, const char* op_name = "op") {
        if (check_finite_ && !value.all_finite())
            throw NumericError(std::string(op_name) + ": non-finite values in forward output");
        bool ng = false;
        if (grad_enabled_)
            for (Var p : parents) ng = ng || nodes_[static_cast<size_t>(p.i)].needs_grad;
        Var out = push(std::move(value), ng, nullptr);
        if (ng && backward)
            nodes_[static_cast<size_t>(out.i)].backward =
                [out, fn = std::move(backward)](Tape& t) { fn(t, out); };
        return out;
    }

    // Seeds d(root)=1 (root must be scalar-like) and sweeps the tape.
    void backward(Var root) {
        TensorT<T> seed(nodes_[static_cast<size_t>(root.i)].value.shape, T(1));
        backward(root, std::move(seed));
    }

    void backward(Var root, TensorT<T> seed) {
        if (!grad_enabled_) throw ConfigError("backward on a grad-disabled tape");
        accumulate(grad(root), seed);
        for (i64 i = static_cast<i64>(nodes_.size()) - 1; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.needs_grad && n.backward && !n.grad.empty()) n.backward(*this);
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        TensorT<T> value;
        TensorT<T> grad;
        bool needs_grad = false;
        std::function<void(Tape&)> backward;
    };

    Var push(TensorT<T> v, bool needs_grad, std::function<void(Tape&)> bw) {
        Node n;
        n.value = std::move(v);
        n.needs_grad = needs_grad;
        n.backward = std::move(bw);
        nodes_.push_back(std::move(n));
        return Var{static_cast<i64>(nodes_.size()) - 1};
    }

    std::vector<Node> nodes_;
    bool grad_enabled_;
    bool check_finite_;
};

}  // namespace cliffm
