#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "ldp/tensor.hpp"

namespace ldp {

class Tape;

// Handle to a node on a tape.
struct Var {
    int idx = -1;
    bool ok() const { return idx >= 0; }
};

// Eager reverse-mode tape. Values are computed when an op is recorded;
// backward() runs one reverse sweep and accumulates gradients into every
// reachable node. A tape is single-use: build, backward once, read grads.
// Not thread-safe; use one tape per worker.
class Tape {
  public:
    // Leaves. input_ref avoids copying large parameter tensors; the pointee
    // must outlive the tape and stay unmodified until backward has run.
    Var input(Tensor value);
    Var input_ref(const Tensor* value);

    const Tensor& value(Var v) const;
    const Tensor& grad(Var v);  // zeros if the backward sweep never reached v

    // elementwise
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var add_const(Var a, double c);
    Var exp(Var a);
    Var square(Var a);
    Var sigmoid(Var a);
    Var silu(Var a);

    // shape and channel ops ({H,W,C} layout)
    Var reshape(Var a, std::vector<int> shape);
    Var slice_channels(Var a, int c0, int c1);
    Var add_channel_bias(Var x, Var bias);
    Var softmax_channels(Var a);

    // reductions (all return scalar nodes of shape {1})
    Var sum(Var a);
    Var mean(Var a);
    Var reduce_max(Var a);  // ties: first flat index wins
    Var mean_squared_error(Var a, Var b);

    // linear / convolution
    Var dense(Var x, Var w, Var b);                            // {n} x {n,m} + {m}
    Var conv2d(Var x, Var w, Var b, int stride, int pad);      // w: {kh,kw,cin,cout}
    Var conv2d_transpose(Var x, Var w, Var b, int stride, int pad);

    void backward(Var root);  // root must be scalar
    void backward(const std::vector<std::pair<Var, Tensor>>& seeds);

    size_t node_count() const { return nodes_.size(); }

    // Extension surface for ops with hand-written backward passes.
    Var push_node(Tensor value, std::function<void(Tape&, int)> back);
    const Tensor& node_value(int idx) const;
    Tensor& grad_buffer(int idx);  // lazily zero-initialized, marks the node live

  private:
    struct Node {
        Tensor value;
        const Tensor* ref = nullptr;
        Tensor grad;
        bool has_grad = false;
        std::function<void(Tape&, int)> back;
    };

    std::vector<Node> nodes_;
    bool backward_done_ = false;

    const Tensor& val(int idx) const {
        const Node& n = nodes_[static_cast<size_t>(idx)];
        return n.ref ? *n.ref : n.value;
    }
    Var unary(Var a, Tensor value, std::function<void(Tape&, int)> back);
    void check(Var v) const;
};

}  // namespace ldp
