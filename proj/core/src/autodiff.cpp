#include "cfp/autodiff.hpp"

#include <cassert>

namespace cfp {

Var Tape::leaf(std::shared_ptr<const Tensor> value, std::string name) {
    int id = static_cast<int>(nodes_.size());
    TapeNode node;
    node.op = name.empty() ? "leaf" : "leaf:" + name;
    node.out_shape = value->shape();
    nodes_.push_back(std::move(node));
    values_.push_back(value);
    return Var{std::move(value), this, id};
}

Var Tape::record(std::string op, const std::vector<const Var*>& inputs,
                 std::shared_ptr<const Tensor> out,
                 std::function<void(const Tensor&, const std::function<void(std::size_t, Tensor&&)>&)> vjp) {
    int id = static_cast<int>(nodes_.size());
    TapeNode node;
    node.op = std::move(op);
    node.out_shape = out->shape();
    node.inputs.reserve(inputs.size());
    for (const Var* v : inputs) {
        if (v && v->recorded()) {
            if (v->tape != this) throw Error("tape: op mixes vars from different tapes");
            assert(v->id < id && "tape must be an append-only DAG");
            node.inputs.push_back(v->id);
        } else {
            node.inputs.push_back(-1);
        }
    }
    node.vjp = std::move(vjp);
    nodes_.push_back(std::move(node));
    values_.push_back(out);
    return Var{std::move(out), this, id};
}

void Tape::backward(const Var& output) {
    if (!output.recorded() || output.tape != this) throw Error("tape: backward target is not recorded here");
    if (output.value->numel() != 1)
        throw ShapeError("backward expects a scalar output, got " + shape_str(output.value->shape()));

    grads_.assign(nodes_.size(), Tensor{});
    auto& seed = grads_[static_cast<std::size_t>(output.id)];
    seed = Tensor(output.value->shape());
    seed[0] = 1.0f;

    for (int id = output.id; id >= 0; --id) {
        Tensor& g = grads_[static_cast<std::size_t>(id)];
        if (g.empty()) continue; // not on the path
        const TapeNode& node = nodes_[static_cast<std::size_t>(id)];
        if (!node.vjp) continue; // leaf or context-free op
        node.vjp(g, [&](std::size_t slot, Tensor&& grad_in) {
            int in_id = node.inputs.at(slot);
            if (in_id < 0) return; // constant input
            assert(in_id < id && "acyclic by construction");
            Tensor& acc = grads_[static_cast<std::size_t>(in_id)];
            if (acc.empty()) {
                acc = std::move(grad_in);
            } else {
                auto a = acc.data();
                auto b = grad_in.data();
                for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
            }
        });
    }
}

Tensor Tape::grad(const Var& v) const {
    if (!v.recorded() || v.tape != this) throw Error("tape: grad() of an unrecorded var");
    if (grads_.empty()) throw Error("tape: backward() has not run");
    const Tensor& g = grads_[static_cast<std::size_t>(v.id)];
    if (g.empty()) return Tensor(v.value->shape()); // zero: leaf not on the path
    return g;
}

} // namespace cfp
