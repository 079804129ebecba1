#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cfp/tensor.hpp"

namespace cfp {

class Tape;

// Handle to a tensor value that may be recorded on a tape. A Var with
// tape == nullptr is a constant: ops flow through it but record no history
// and no gradient ever reaches it.
struct Var {
    std::shared_ptr<const Tensor> value;
    Tape* tape = nullptr;
    int id = -1;

    const Tensor& t() const { return *value; }
    const Shape& shape() const { return value->shape(); }
    bool recorded() const { return tape != nullptr && id >= 0; }
};

// One recorded operation. `inputs` holds node ids (-1 for constants), and
// `vjp` carries the saved forward context needed for the vector-Jacobian
// product as a closure. The tape is an append-only DAG: every input id of a
// node is smaller than the node's own id.
struct TapeNode {
    std::string op;
    std::vector<int> inputs;
    Shape out_shape;
    // vjp(grad_out, sink): sink(slot, grad) accumulates grad into inputs[slot].
    std::function<void(const Tensor&, const std::function<void(std::size_t, Tensor&&)>&)> vjp;
};

// Reverse-mode gradient tape. Recording is opt-in: values only enter the tape
// through leaf()/record(); plain-tensor forwards never touch a tape. A tape is
// single-owner — recording and backward are single-threaded by contract.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers an input or parameter as a differentiable leaf.
    Var leaf(std::shared_ptr<const Tensor> value, std::string name = {});
    Var leaf(Tensor value, std::string name = {}) {
        return leaf(std::make_shared<const Tensor>(std::move(value)), std::move(name));
    }

    // Appends an op node; used by TapeCtx. `out` is shared so op closures can
    // capture their own output (softmax and friends).
    Var record(std::string op, const std::vector<const Var*>& inputs,
               std::shared_ptr<const Tensor> out,
               std::function<void(const Tensor&, const std::function<void(std::size_t, Tensor&&)>&)> vjp);

    // Runs reverse-mode accumulation from a scalar output. Gradients for
    // every node reachable from `output` are materialized; leaves not on the
    // path report zeros. Throws ShapeError if output is not scalar.
    void backward(const Var& output);

    // Gradient of the last backward() w.r.t. a recorded var. Zeros if the
    // var never received a gradient.
    Tensor grad(const Var& v) const;

    bool has_grads() const { return !grads_.empty(); }
    std::size_t size() const { return nodes_.size(); }
    const TapeNode& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

private:
    std::vector<TapeNode> nodes_;
    std::vector<std::shared_ptr<const Tensor>> values_;
    std::vector<Tensor> grads_; // parallel to nodes_ after backward()
};

// Wraps a tensor as an unrecorded constant. The tensor is copied into shared
// ownership so the Var is self-contained.
inline Var constant(Tensor t) {
    return Var{std::make_shared<const Tensor>(std::move(t)), nullptr, -1};
}

// Non-owning constant view; caller guarantees `t` outlives the Var.
inline Var constant_view(const Tensor& t) {
    return Var{std::shared_ptr<const Tensor>(std::shared_ptr<void>(), &t), nullptr, -1};
}

} // namespace cfp
