#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "midres/kernels.hpp"
#include "midres/parameter.hpp"
#include "midres/tensor.hpp"

namespace midres {

/// Handle to a value recorded on a Tape.
struct Value {
    int id = -1;
};

enum class OpKind : std::uint8_t {
    constant,
    param,
    conv2d,
    maxpool2d,
    relu,
    dense,
    flatten,
    residual_add,
    softmax_xent,
};

/// One recorded operation: the op kind, its input values, the produced
/// output, and whatever the backward rule needs (pool argmax indices, the
/// lowered conv patches, softmax probabilities). Replaying the op from its
/// recorded inputs reproduces the output bit-for-bit.
template <typename T>
struct OpRecord {
    OpKind kind = OpKind::constant;
    int in[3] = {-1, -1, -1};
    Tensor<T> out;
    Tensor<T> saved;                   // conv2d: patch matrix; softmax_xent: probabilities
    std::vector<std::uint32_t> argmax; // maxpool2d winners
    std::vector<int> labels;           // softmax_xent
    std::size_t padding = 0;
    std::size_t stride = 1;
    Parameter<T>* param = nullptr;     // leaf binding for gradient accumulation
    bool needs_grad = false;
};

/// Records a forward pass op by op and differentiates it in reverse.
/// Tensors produced by ops are immutable once recorded; backward accumulates
/// (+=) into each reachable Parameter's grad.
template <typename T>
class Tape {
public:
    Value constant(Tensor<T> t) {
        OpRecord<T> n;
        n.kind = OpKind::constant;
        n.out = std::move(t);
        return push(std::move(n));
    }

    Value param(Parameter<T>& p) {
        OpRecord<T> n;
        n.kind = OpKind::param;
        n.out = p.value;
        n.param = &p;
        n.needs_grad = true;
        return push(std::move(n));
    }

    Value conv2d(Value x, Value w, Value b, std::size_t padding, std::size_t stride) {
        const Tensor<T>& xt = value(x);
        const Tensor<T>& wt = value(w);
        const Tensor<T>& bt = value(b);
        if (xt.rank() != 4 || wt.rank() != 4) {
            throw std::invalid_argument("conv2d expects rank-4 input and weight, got " +
                                        shape_str(xt.shape) + " and " + shape_str(wt.shape));
        }
        if (wt.shape[1] != xt.shape[1]) {
            throw std::invalid_argument("conv2d channel mismatch: input " + shape_str(xt.shape) +
                                        " vs weight " + shape_str(wt.shape));
        }
        if (bt.rank() != 1 || bt.shape[0] != wt.shape[0]) {
            throw std::invalid_argument("conv2d bias " + shape_str(bt.shape) + " must be [" +
                                        std::to_string(wt.shape[0]) + "]");
        }
        if (stride == 0) throw std::invalid_argument("conv2d stride must be positive");
        if (wt.shape[2] > xt.shape[2] + 2 * padding || wt.shape[3] > xt.shape[3] + 2 * padding) {
            throw std::invalid_argument("conv2d kernel " + shape_str(wt.shape) +
                                        " exceeds padded input " + shape_str(xt.shape));
        }

        OpRecord<T> n;
        n.kind = OpKind::conv2d;
        n.in[0] = x.id;
        n.in[1] = w.id;
        n.in[2] = b.id;
        n.padding = padding;
        n.stride = stride;
        const std::size_t ho = detail::conv_out_extent(xt.shape[2], wt.shape[2], padding, stride);
        const std::size_t wo = detail::conv_out_extent(xt.shape[3], wt.shape[3], padding, stride);
        n.out = Tensor<T>({xt.shape[0], wt.shape[0], ho, wo});
        n.saved = Tensor<T>({xt.shape[0], wt.shape[1] * wt.shape[2] * wt.shape[3], ho * wo});
        detail::conv2d_forward(xt, wt, bt, padding, stride, n.out, n.saved);
        n.needs_grad = needs_grad(x) || needs_grad(w) || needs_grad(b);
        return push(std::move(n));
    }

    Value maxpool2d(Value x) {
        const Tensor<T>& xt = value(x);
        if (xt.rank() != 4) {
            throw std::invalid_argument("maxpool2d expects rank-4 input, got " + shape_str(xt.shape));
        }
        if (xt.shape[2] % 2 != 0 || xt.shape[3] % 2 != 0) {
            throw std::invalid_argument("maxpool2d requires even spatial dims, got " + shape_str(xt.shape));
        }
        OpRecord<T> n;
        n.kind = OpKind::maxpool2d;
        n.in[0] = x.id;
        n.out = Tensor<T>({xt.shape[0], xt.shape[1], xt.shape[2] / 2, xt.shape[3] / 2});
        n.argmax.resize(n.out.numel());
        detail::maxpool2d_forward(xt, n.out, n.argmax.data());
        n.needs_grad = needs_grad(x);
        return push(std::move(n));
    }

    Value relu(Value x) {
        const Tensor<T>& xt = value(x);
        OpRecord<T> n;
        n.kind = OpKind::relu;
        n.in[0] = x.id;
        n.out = Tensor<T>(xt.shape);
        detail::relu_forward(xt, n.out);
        n.needs_grad = needs_grad(x);
        return push(std::move(n));
    }

    Value dense(Value x, Value w, Value b) {
        const Tensor<T>& xt = value(x);
        const Tensor<T>& wt = value(w);
        const Tensor<T>& bt = value(b);
        if (xt.rank() != 2 || wt.rank() != 2 || xt.shape[1] != wt.shape[0]) {
            throw std::invalid_argument("dense dimension mismatch: input " + shape_str(xt.shape) +
                                        " vs weight " + shape_str(wt.shape));
        }
        if (bt.rank() != 1 || bt.shape[0] != wt.shape[1]) {
            throw std::invalid_argument("dense bias " + shape_str(bt.shape) + " must be [" +
                                        std::to_string(wt.shape[1]) + "]");
        }
        OpRecord<T> n;
        n.kind = OpKind::dense;
        n.in[0] = x.id;
        n.in[1] = w.id;
        n.in[2] = b.id;
        n.out = Tensor<T>({xt.shape[0], wt.shape[1]});
        detail::dense_forward(xt, wt, bt, n.out);
        n.needs_grad = needs_grad(x) || needs_grad(w) || needs_grad(b);
        return push(std::move(n));
    }

    Value flatten(Value x) {
        const Tensor<T>& xt = value(x);
        if (xt.rank() != 4) {
            throw std::invalid_argument("flatten expects rank-4 input, got " + shape_str(xt.shape));
        }
        OpRecord<T> n;
        n.kind = OpKind::flatten;
        n.in[0] = x.id;
        n.out = Tensor<T>({xt.shape[0], xt.shape[1] * xt.shape[2] * xt.shape[3]}, xt.data);
        n.needs_grad = needs_grad(x);
        return push(std::move(n));
    }

    Value residual_add(Value a, Value b) {
        const Tensor<T>& at = value(a);
        const Tensor<T>& bt = value(b);
        if (!at.same_shape(bt)) {
            throw std::invalid_argument("residual_add shape mismatch: " + shape_str(at.shape) +
                                        " vs " + shape_str(bt.shape));
        }
        OpRecord<T> n;
        n.kind = OpKind::residual_add;
        n.in[0] = a.id;
        n.in[1] = b.id;
        n.out = Tensor<T>(at.shape);
        for (std::size_t i = 0; i < at.numel(); ++i) n.out.data[i] = at.data[i] + bt.data[i];
        n.needs_grad = needs_grad(a) || needs_grad(b);
        return push(std::move(n));
    }

    /// Softmax fused with categorical cross-entropy. Produces a scalar loss;
    /// the softmax probabilities are cached on the record (see
    /// probabilities()).
    Value softmax_cross_entropy(Value logits, std::vector<int> labels) {
        const Tensor<T>& lt = value(logits);
        if (lt.rank() != 2) {
            throw std::invalid_argument("softmax_cross_entropy expects rank-2 logits, got " +
                                        shape_str(lt.shape));
        }
        if (labels.size() != lt.shape[0]) {
            throw std::invalid_argument("softmax_cross_entropy got " + std::to_string(labels.size()) +
                                        " labels for " + std::to_string(lt.shape[0]) + " rows");
        }
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= lt.shape[1]) {
                throw std::invalid_argument("label " + std::to_string(labels[i]) + " at row " +
                                            std::to_string(i) + " outside [0," +
                                            std::to_string(lt.shape[1]) + ")");
            }
        }
        OpRecord<T> n;
        n.kind = OpKind::softmax_xent;
        n.in[0] = logits.id;
        n.labels = std::move(labels);
        n.saved = Tensor<T>(lt.shape);
        n.out = Tensor<T>({1});
        n.out.data[0] = detail::softmax_cross_entropy_forward(lt, n.labels, n.saved);
        n.needs_grad = needs_grad(logits);
        return push(std::move(n));
    }

    const Tensor<T>& value(Value v) const { return node(v.id).out; }

    /// Cached softmax probabilities of a softmax_cross_entropy record.
    const Tensor<T>& probabilities(Value xent) const {
        const OpRecord<T>& n = node(xent.id);
        if (n.kind != OpKind::softmax_xent) {
            throw std::invalid_argument("probabilities() needs a softmax_cross_entropy value");
        }
        return n.saved;
    }

    T scalar(Value v) const {
        const Tensor<T>& t = value(v);
        if (t.numel() != 1) throw std::invalid_argument("scalar() on tensor of shape " + shape_str(t.shape));
        return t.data[0];
    }

    std::size_t size() const { return nodes_.size(); }
    const OpRecord<T>& record(Value v) const { return node(v.id); }
    const std::vector<OpRecord<T>>& records() const { return nodes_; }

    /// Reverse-mode sweep from a scalar root. Each reachable Parameter
    /// receives grad += dRoot/dParameter; node gradients are local to the
    /// call, so repeated backward calls accumulate.
    void backward(Value root) {
        const OpRecord<T>& rn = node(root.id);
        if (rn.out.numel() != 1) {
            throw std::invalid_argument("backward requires a scalar root, got shape " +
                                        shape_str(rn.out.shape));
        }
        std::vector<Tensor<T>> grads(static_cast<std::size_t>(root.id) + 1);
        grads[root.id] = Tensor<T>(rn.out.shape);
        grads[root.id].data[0] = T(1);

        for (int id = root.id; id >= 0; --id) {
            if (grads[id].data.empty()) continue;
            const OpRecord<T>& n = nodes_[id];
            if (!n.needs_grad) continue;
            const Tensor<T>& gout = grads[id];
            switch (n.kind) {
                case OpKind::constant:
                    break;
                case OpKind::param:
                    for (std::size_t i = 0; i < gout.numel(); ++i) n.param->grad.data[i] += gout.data[i];
                    break;
                case OpKind::conv2d: {
                    Tensor<T>* gx = grad_slot(grads, n.in[0]);
                    Tensor<T>* gw = grad_slot(grads, n.in[1]);
                    Tensor<T>* gb = grad_slot(grads, n.in[2]);
                    detail::conv2d_backward(gout, nodes_[n.in[1]].out, n.saved, nodes_[n.in[0]].out.shape,
                                            n.padding, n.stride, gx, gw, gb);
                    break;
                }
                case OpKind::maxpool2d: {
                    if (Tensor<T>* gx = grad_slot(grads, n.in[0])) {
                        detail::maxpool2d_backward(gout, n.argmax, *gx);
                    }
                    break;
                }
                case OpKind::relu: {
                    if (Tensor<T>* gx = grad_slot(grads, n.in[0])) {
                        detail::relu_backward(gout, nodes_[n.in[0]].out, *gx);
                    }
                    break;
                }
                case OpKind::dense: {
                    Tensor<T>* gx = grad_slot(grads, n.in[0]);
                    Tensor<T>* gw = grad_slot(grads, n.in[1]);
                    Tensor<T>* gb = grad_slot(grads, n.in[2]);
                    detail::dense_backward(gout, nodes_[n.in[0]].out, nodes_[n.in[1]].out, gx, gw, gb);
                    break;
                }
                case OpKind::flatten: {
                    if (Tensor<T>* gx = grad_slot(grads, n.in[0])) {
                        for (std::size_t i = 0; i < gout.numel(); ++i) gx->data[i] += gout.data[i];
                    }
                    break;
                }
                case OpKind::residual_add: {
                    for (int slot = 0; slot < 2; ++slot) {
                        if (Tensor<T>* g = grad_slot(grads, n.in[slot])) {
                            for (std::size_t i = 0; i < gout.numel(); ++i) g->data[i] += gout.data[i];
                        }
                    }
                    break;
                }
                case OpKind::softmax_xent: {
                    if (Tensor<T>* gx = grad_slot(grads, n.in[0])) {
                        detail::softmax_cross_entropy_backward(gout.data[0], n.saved, n.labels, *gx);
                    }
                    break;
                }
            }
        }
    }

    /// Recomputes one record's output from its recorded inputs. Used to
    /// verify the record invariant: the result must equal the recorded
    /// output bit-for-bit.
    Tensor<T> replay(Value v) const {
        const OpRecord<T>& n = node(v.id);
        if (n.kind == OpKind::constant || n.kind == OpKind::param) return n.out;
        Tensor<T> out;
        Tensor<T> scratch;
        recompute(n, &nodes_[n.in[0]].out, n.in[1] >= 0 ? &nodes_[n.in[1]].out : nullptr,
                  n.in[2] >= 0 ? &nodes_[n.in[2]].out : nullptr, out, scratch);
        return out;
    }

    /// Loss at `root` after adding `delta` to one element of a recorded
    /// parameter, recomputing only the records downstream of it. The result
    /// is bit-identical to rebuilding the whole graph with the perturbed
    /// parameter; the tape and the parameter itself are left untouched.
    T eval_perturbed(Value root, const Parameter<T>& p, std::size_t elem, T delta) {
        const OpRecord<T>& rn = node(root.id);
        if (rn.out.numel() != 1) {
            throw std::invalid_argument("eval_perturbed requires a scalar root");
        }
        const std::size_t count = static_cast<std::size_t>(root.id) + 1;
        if (fd_dirty_.size() < count) {
            fd_dirty_.resize(count);
            fd_out_.resize(count);
            fd_col_.resize(count);
        }
        fd_touched_.clear();
        for (std::size_t id = 0; id < count; ++id) {
            const OpRecord<T>& n = nodes_[id];
            bool dirty = false;
            if (n.kind == OpKind::param && n.param == &p) {
                if (!fd_out_[id].same_shape(n.out)) fd_out_[id] = n.out;
                fd_out_[id].data[elem] = n.out.data[elem] + delta;
                fd_touched_.push_back(id);
                dirty = true;
            } else if (n.kind != OpKind::constant && n.kind != OpKind::param) {
                for (int slot = 0; slot < 3; ++slot) {
                    if (n.in[slot] >= 0 && fd_dirty_[n.in[slot]]) dirty = true;
                }
                if (dirty) {
                    recompute(n, pick(n.in[0]), n.in[1] >= 0 ? pick(n.in[1]) : nullptr,
                              n.in[2] >= 0 ? pick(n.in[2]) : nullptr, fd_out_[id], fd_col_[id]);
                }
            }
            fd_dirty_[id] = dirty;
        }
        if (fd_touched_.empty()) {
            throw std::invalid_argument("parameter '" + p.name + "' is not recorded on this tape");
        }
        const T result = fd_dirty_[root.id] ? fd_out_[root.id].data[0] : rn.out.data[0];
        for (std::size_t id : fd_touched_) fd_out_[id].data[elem] = nodes_[id].out.data[elem];
        return result;
    }

private:
    std::vector<OpRecord<T>> nodes_;
    // scratch reused across eval_perturbed calls
    std::vector<char> fd_dirty_;
    std::vector<Tensor<T>> fd_out_;
    std::vector<Tensor<T>> fd_col_;
    std::vector<std::size_t> fd_touched_;

    const OpRecord<T>& node(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
            throw std::invalid_argument("value id " + std::to_string(id) + " not on this tape");
        }
        return nodes_[id];
    }

    bool needs_grad(Value v) const { return node(v.id).needs_grad; }

    Value push(OpRecord<T>&& n) {
        nodes_.push_back(std::move(n));
        return Value{static_cast<int>(nodes_.size()) - 1};
    }

    // Grad tensor for an input node, allocated zero on first touch; null if
    // nothing upstream wants a gradient.
    Tensor<T>* grad_slot(std::vector<Tensor<T>>& grads, int id) {
        if (id < 0 || !nodes_[id].needs_grad) return nullptr;
        if (grads[id].data.empty()) grads[id] = Tensor<T>(nodes_[id].out.shape);
        return &grads[id];
    }

    const Tensor<T>* pick(int id) const {
        return fd_dirty_[id] ? &fd_out_[id] : &nodes_[id].out;
    }

    // Re-runs one record's forward rule against the given inputs.
    void recompute(const OpRecord<T>& n, const Tensor<T>* a, const Tensor<T>* b, const Tensor<T>* c,
                   Tensor<T>& out, Tensor<T>& col) const {
        switch (n.kind) {
            case OpKind::conv2d: {
                if (!out.same_shape(n.out)) out = Tensor<T>(n.out.shape);
                if (!col.same_shape(n.saved)) col = Tensor<T>(n.saved.shape);
                detail::conv2d_forward(*a, *b, *c, n.padding, n.stride, out, col);
                break;
            }
            case OpKind::maxpool2d: {
                if (!out.same_shape(n.out)) out = Tensor<T>(n.out.shape);
                detail::maxpool2d_forward(*a, out, static_cast<std::uint32_t*>(nullptr));
                break;
            }
            case OpKind::relu: {
                if (!out.same_shape(n.out)) out = Tensor<T>(n.out.shape);
                detail::relu_forward(*a, out);
                break;
            }
            case OpKind::dense: {
                if (!out.same_shape(n.out)) out = Tensor<T>(n.out.shape);
                detail::dense_forward(*a, *b, *c, out);
                break;
            }
            case OpKind::flatten: {
                out = Tensor<T>(n.out.shape, a->data);
                break;
            }
            case OpKind::residual_add: {
                if (!out.same_shape(n.out)) out = Tensor<T>(n.out.shape);
                for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a->data[i] + b->data[i];
                break;
            }
            case OpKind::softmax_xent: {
                if (!out.same_shape(n.out)) out = Tensor<T>(n.out.shape);
                Tensor<T> probs(n.saved.shape);
                out.data[0] = detail::softmax_cross_entropy_forward(*a, n.labels, probs);
                break;
            }
            case OpKind::constant:
            case OpKind::param:
                out = n.out;
                break;
        }
    }
};

}  // namespace midres
