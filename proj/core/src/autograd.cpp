#include "ldp/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ldp {

namespace {

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

int last_dim(const Tensor& t) {
    if (t.rank() < 1) throw std::invalid_argument("tensor rank must be >= 1");
    return t.shape.back();
}

}  // namespace

void Tape::check(Var v) const {
    if (!v.ok() || v.idx >= static_cast<int>(nodes_.size()))
        throw std::logic_error("Var does not belong to this tape");
}

Var Tape::input(Tensor value) {
    nodes_.push_back(Node{std::move(value), nullptr, {}, false, nullptr});
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input_ref(const Tensor* value) {
    if (!value) throw std::invalid_argument("input_ref: null tensor");
    nodes_.push_back(Node{{}, value, {}, false, nullptr});
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push_node(Tensor value, std::function<void(Tape&, int)> back) {
    nodes_.push_back(Node{std::move(value), nullptr, {}, false, std::move(back)});
    return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::value(Var v) const {
    check(v);
    return val(v.idx);
}

const Tensor& Tape::node_value(int idx) const { return val(idx); }

Tensor& Tape::grad_buffer(int idx) {
    Node& n = nodes_[static_cast<size_t>(idx)];
    if (!n.has_grad) {
        n.grad = Tensor(val(idx).shape);
        n.has_grad = true;
    }
    return n.grad;
}

const Tensor& Tape::grad(Var v) {
    check(v);
    return grad_buffer(v.idx);
}

Var Tape::unary(Var a, Tensor value, std::function<void(Tape&, int)> back) {
    check(a);
    return push_node(std::move(value), std::move(back));
}

Var Tape::add(Var a, Var b) {
    check(a);
    check(b);
    const Tensor& ta = val(a.idx);
    const Tensor& tb = val(b.idx);
    if (!ta.same_shape(tb)) throw std::invalid_argument("add: shape mismatch");
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
    const int pa = a.idx, pb = b.idx;
    return push_node(std::move(out), [pa, pb](Tape& t, int self) {
        const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
        Tensor& ga = t.grad_buffer(pa);
        Tensor& gb = t.grad_buffer(pb);
        for (size_t i = 0; i < g.data.size(); ++i) {
            ga.data[i] += g.data[i];
            gb.data[i] += g.data[i];
        }
    });
}

Var Tape::sub(Var a, Var b) {
    check(a);
    check(b);
    const Tensor& ta = val(a.idx);
    const Tensor& tb = val(b.idx);
    if (!ta.same_shape(tb)) throw std::invalid_argument("sub: shape mismatch");
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= tb.data[i];
    const int pa = a.idx, pb = b.idx;
    return push_node(std::move(out), [pa, pb](Tape& t, int self) {
        const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
        Tensor& ga = t.grad_buffer(pa);
        Tensor& gb = t.grad_buffer(pb);
        for (size_t i = 0; i < g.data.size(); ++i) {
            ga.data[i] += g.data[i];
            gb.data[i] -= g.data[i];
        }
    });
}

Var Tape::mul(Var a, Var b) {
    check(a);
    check(b);
    const Tensor& ta = val(a.idx);
    const Tensor& tb = val(b.idx);
    if (!ta.same_shape(tb)) throw std::invalid_argument("mul: shape mismatch");
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
    const int pa = a.idx, pb = b.idx;
    return push_node(std::move(out), [pa, pb](Tape& t, int self) {
        const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
        const Tensor& va = t.val(pa);
        const Tensor& vb = t.val(pb);
        Tensor& ga = t.grad_buffer(pa);
        Tensor& gb = t.grad_buffer(pb);
        for (size_t i = 0; i < g.data.size(); ++i) {
            ga.data[i] += g.data[i] * vb.data[i];
            gb.data[i] += g.data[i] * va.data[i];
        }
    });
}

Var Tape::scale(Var a, double c) {
    check(a);
    Tensor out = val(a.idx);
    for (double& v : out.data) v *= c;
    const int pa = a.idx;
    return push_node(std::move(out), [pa, c](Tape& t, int self) {
        const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
        Tensor& ga = t.grad_buffer(pa);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += c * g.data[i];
    });
}

Var Tape::add_const(Var a, double c) {
    check(a);
    Tensor out = val(a.idx);
    for (double& v : out.data) v += c;
    const int pa = a.idx;
    return push_node(std::move(out), [pa](Tape& t, int self) {
        const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
        Tensor& ga = t.grad_buffer(pa);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
    });
}

Var Tape::exp(Var a) {
    check(a);
    Tensor out = val(a.idx);
    for (double& v : out.data) v = std::exp(v);
    const int pa = a.idx;
    return push_node(std::move(out), [pa](Tape& t, int self) {
        const Node& n = t.nodes_[static_cast<size_t>(self)];
        Tensor& ga = t.grad_buffer(pa);
        for (size_t i = 0; i < n.grad.data.size(); ++i)
            ga.data[i] += n.grad.data[i] * n.value.data[i];
    });
}

Var Tape::square(Var a) {
    check(a);
    Tensor out = val(a.idx);
    for (double& v : out.data) v *= v;
    const int pa = a.idx;
    return push_node(std::move(out), [pa](Tape& t, int self) {
        const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
        const Tensor& va = t.val(pa);
        Tensor& ga = t.grad_buffer(pa);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += 2.0 * va.data[i] * g.data[i];
    });
}

Var Tape::sigmoid(Var a) {
    check(a);
    Tensor out = val(a.idx);
    for (double& v : out.data) v = sigmoid_scalar(v);
    const int pa = a.idx;
    return push_node(std::move(out), [pa](Tape& t, int self) {
        const Node& n = t.nodes_[static_cast<size_t>(self)];
        Tensor& ga = t.grad_buffer(pa);
        for (size_t i = 0; i < n.grad.data.size(); ++i) {
            const double y = n.value.data[i];
            ga.data[i] += n.grad.data[i] * y * (1.0 - y);
        }
    });
}

Var Tape::silu(Var a) {
    check(a);
    Tensor out = val(a.idx);
    for (double& v : out.data) v = v * sigmoid_scalar(v);
    const int pa = a.idx;
    return push_node(std::move(out), [pa](Tape& t, int self) {
        const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
        const Tensor& x = t.val(pa);
        Tensor& ga = t.grad_buffer(pa);
        for (size_t i = 0; i < g.data.size(); ++i) {
            const double s = sigmoid_scalar(x.data[i]);
            ga.data[i] += g.data[i] * s * (1.0 + x.data[i] * (1.0 - s));
        }
    });
}

Var Tape::reshape(Var a, std::vector<int> shape) {
    check(a);
    const Tensor& ta = val(a.idx);
    if (Tensor::numel_of(shape) != ta.numel()) throw std::invalid_argument("reshape: element count mismatch");
    Tensor out = ta;
    out.shape = std::move(shape);
    const int pa = a.idx;
    return push_node(std::move(out), [pa](Tape& t, int self) {
        const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
        Tensor& ga = t.grad_buffer(pa);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
    });
}

Var Tape::slice_channels(Var a, int c0, int c1) {
    check(a);
    const Tensor& ta = val(a.idx);
    const int c = last_dim(ta);
    if (c0 < 0 || c1 > c || c0 >= c1) throw std::invalid_argument("slice_channels: bad range");
    const int64_t outer = ta.numel() / c;
    std::vector<int> shape = ta.shape;
    shape.back() = c1 - c0;
    Tensor out(shape);
    for (int64_t o = 0; o < outer; ++o)
        for (int k = c0; k < c1; ++k)
            out.data[static_cast<size_t>(o * (c1 - c0) + k - c0)] =
                ta.data[static_cast<size_t>(o * c + k)];
    const int pa = a.idx;
    return push_node(std::move(out), [pa, c0, c1, c, outer](Tape& t, int self) {
        const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
        Tensor& ga = t.grad_buffer(pa);
        for (int64_t o = 0; o < outer; ++o)
            for (int k = c0; k < c1; ++k)
                ga.data[static_cast<size_t>(o * c + k)] +=
                    g.data[static_cast<size_t>(o * (c1 - c0) + k - c0)];
    });
}

Var Tape::add_channel_bias(Var x, Var bias) {
    check(x);
    check(bias);
    const Tensor& tx = val(x.idx);
    const Tensor& tb = val(bias.idx);
    const int c = last_dim(tx);
    if (tb.rank() != 1 || tb.dim(0) != c)
        throw std::invalid_argument("add_channel_bias: bias must match channel count");
    const int64_t outer = tx.numel() / c;
    Tensor out = tx;
    for (int64_t o = 0; o < outer; ++o)
        for (int k = 0; k < c; ++k)
            out.data[static_cast<size_t>(o * c + k)] += tb.data[static_cast<size_t>(k)];
    const int px = x.idx, pb = bias.idx;
    return push_node(std::move(out), [px, pb, c, outer](Tape& t, int self) {
        const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
        Tensor& gx = t.grad_buffer(px);
        Tensor& gb = t.grad_buffer(pb);
        for (int64_t o = 0; o < outer; ++o)
            for (int k = 0; k < c; ++k) {
                const double gv = g.data[static_cast<size_t>(o * c + k)];
                gx.data[static_cast<size_t>(o * c + k)] += gv;
                gb.data[static_cast<size_t>(k)] += gv;
            }
    });
}

Var Tape::softmax_channels(Var a) {
    check(a);
    const Tensor& ta = val(a.idx);
    const int c = last_dim(ta);
    const int64_t outer = ta.numel() / c;
    Tensor out(ta.shape);
    for (int64_t o = 0; o < outer; ++o) {
        const double* in = &ta.data[static_cast<size_t>(o * c)];
        double* y = &out.data[static_cast<size_t>(o * c)];
        double m = in[0];
        for (int k = 1; k < c; ++k) m = std::max(m, in[k]);
        double s = 0.0;
        for (int k = 0; k < c; ++k) {
            y[k] = std::exp(in[k] - m);
            s += y[k];
        }
        for (int k = 0; k < c; ++k) y[k] /= s;
    }
    const int pa = a.idx;
    return push_node(std::move(out), [pa, c, outer](Tape& t, int self) {
        const Node& n = t.nodes_[static_cast<size_t>(self)];
        Tensor& ga = t.grad_buffer(pa);
        for (int64_t o = 0; o < outer; ++o) {
            const double* y = &n.value.data[static_cast<size_t>(o * c)];
            const double* g = &n.grad.data[static_cast<size_t>(o * c)];
            double dot = 0.0;
            for (int k = 0; k < c; ++k) dot += y[k] * g[k];
            double* out_g = &ga.data[static_cast<size_t>(o * c)];
            for (int k = 0; k < c; ++k) out_g[k] += y[k] * (g[k] - dot);
        }
    });
}

Var Tape::sum(Var a) {
    check(a);
    const Tensor& ta = val(a.idx);
    double s = 0.0;
    for (double v : ta.data) s += v;
    const int pa = a.idx;
    Tensor out({1});
    out.data[0] = s;
    return push_node(std::move(out), [pa](Tape& t, int self) {
        const double g = t.nodes_[static_cast<size_t>(self)].grad.data[0];
        Tensor& ga = t.grad_buffer(pa);
        for (double& v : ga.data) v += g;
    });
}

Var Tape::mean(Var a) {
    check(a);
    const Tensor& ta = val(a.idx);
    double s = 0.0;
    for (double v : ta.data) s += v;
    const double inv = 1.0 / static_cast<double>(ta.numel());
    const int pa = a.idx;
    Tensor out({1});
    out.data[0] = s * inv;
    return push_node(std::move(out), [pa, inv](Tape& t, int self) {
        const double g = t.nodes_[static_cast<size_t>(self)].grad.data[0] * inv;
        Tensor& ga = t.grad_buffer(pa);
        for (double& v : ga.data) v += g;
    });
}

Var Tape::reduce_max(Var a) {
    check(a);
    const Tensor& ta = val(a.idx);
    size_t arg = 0;
    for (size_t i = 1; i < ta.data.size(); ++i)
        if (ta.data[i] > ta.data[arg]) arg = i;
    Tensor out({1});
    out.data[0] = ta.data[arg];
    const int pa = a.idx;
    return push_node(std::move(out), [pa, arg](Tape& t, int self) {
        const double g = t.nodes_[static_cast<size_t>(self)].grad.data[0];
        t.grad_buffer(pa).data[arg] += g;
    });
}

Var Tape::mean_squared_error(Var a, Var b) {
    check(a);
    check(b);
    const Tensor& ta = val(a.idx);
    const Tensor& tb = val(b.idx);
    if (!ta.same_shape(tb)) throw std::invalid_argument("mean_squared_error: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < ta.data.size(); ++i) {
        const double d = ta.data[i] - tb.data[i];
        s += d * d;
    }
    const double inv = 1.0 / static_cast<double>(ta.numel());
    Tensor out({1});
    out.data[0] = s * inv;
    const int pa = a.idx, pb = b.idx;
    return push_node(std::move(out), [pa, pb, inv](Tape& t, int self) {
        const double g = t.nodes_[static_cast<size_t>(self)].grad.data[0];
        const Tensor& va = t.val(pa);
        const Tensor& vb = t.val(pb);
        Tensor& ga = t.grad_buffer(pa);
        Tensor& gb = t.grad_buffer(pb);
        const double coef = 2.0 * inv * g;
        for (size_t i = 0; i < va.data.size(); ++i) {
            const double d = coef * (va.data[i] - vb.data[i]);
            ga.data[i] += d;
            gb.data[i] -= d;
        }
    });
}

Var Tape::dense(Var x, Var w, Var b) {
    check(x);
    check(w);
    check(b);
    const Tensor& tx = val(x.idx);
    const Tensor& tw = val(w.idx);
    const Tensor& tb = val(b.idx);
    if (tx.rank() != 1 || tw.rank() != 2 || tb.rank() != 1 || tw.dim(0) != tx.dim(0) ||
        tw.dim(1) != tb.dim(0))
        throw std::invalid_argument("dense: shape mismatch");
    const int n = tx.dim(0), m = tb.dim(0);
    Tensor out({m});
    for (int j = 0; j < m; ++j) out.data[static_cast<size_t>(j)] = tb.data[static_cast<size_t>(j)];
    for (int i = 0; i < n; ++i) {
        const double xv = tx.data[static_cast<size_t>(i)];
        const double* wrow = &tw.data[static_cast<size_t>(i) * m];
        for (int j = 0; j < m; ++j) out.data[static_cast<size_t>(j)] += xv * wrow[j];
    }
    const int px = x.idx, pw = w.idx, pb = b.idx;
    return push_node(std::move(out), [px, pw, pb, n, m](Tape& t, int self) {
        const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
        const Tensor& vx = t.val(px);
        const Tensor& vw = t.val(pw);
        Tensor& gx = t.grad_buffer(px);
        Tensor& gw = t.grad_buffer(pw);
        Tensor& gb = t.grad_buffer(pb);
        for (int j = 0; j < m; ++j) gb.data[static_cast<size_t>(j)] += g.data[static_cast<size_t>(j)];
        for (int i = 0; i < n; ++i) {
            const double xv = vx.data[static_cast<size_t>(i)];
            const double* wrow = &vw.data[static_cast<size_t>(i) * m];
            double* gwrow = &gw.data[static_cast<size_t>(i) * m];
            double acc = 0.0;
            for (int j = 0; j < m; ++j) {
                const double gv = g.data[static_cast<size_t>(j)];
                acc += gv * wrow[j];
                gwrow[j] += gv * xv;
            }
            gx.data[static_cast<size_t>(i)] += acc;
        }
    });
}

Var Tape::conv2d(Var x, Var w, Var b, int stride, int pad) {
    check(x);
    check(w);
    check(b);
    const Tensor& tx = val(x.idx);
    const Tensor& tw = val(w.idx);
    const Tensor& tb = val(b.idx);
    if (tx.rank() != 3 || tw.rank() != 4 || tb.rank() != 1)
        throw std::invalid_argument("conv2d: bad tensor ranks");
    const int h = tx.dim(0), wd = tx.dim(1), cin = tx.dim(2);
    const int kh = tw.dim(0), kw = tw.dim(1), cout = tw.dim(3);
    if (tw.dim(2) != cin || tb.dim(0) != cout)
        throw std::invalid_argument("conv2d: channel mismatch, input " + shape_str(tx.shape) +
                                    " vs weights " + shape_str(tw.shape));
    if (stride < 1 || pad < 0 || h + 2 * pad < kh || wd + 2 * pad < kw)
        throw std::invalid_argument("conv2d: bad geometry");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;

    Tensor out({oh, ow, cout});
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            double* yrow = &out.data[(static_cast<size_t>(oy) * ow + ox) * cout];
            for (int oc = 0; oc < cout; ++oc) yrow[oc] = tb.data[static_cast<size_t>(oc)];
            for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= wd) continue;
                    const double* xrow = &tx.data[(static_cast<size_t>(iy) * wd + ix) * cin];
                    const double* wblk = &tw.data[((static_cast<size_t>(ky) * kw + kx) * cin) * cout];
                    for (int ic = 0; ic < cin; ++ic) {
                        const double xv = xrow[ic];
                        if (xv == 0.0) continue;
                        const double* wrow = wblk + static_cast<size_t>(ic) * cout;
                        for (int oc = 0; oc < cout; ++oc) yrow[oc] += xv * wrow[oc];
                    }
                }
            }
        }

    const int px = x.idx, pw = w.idx, pb = b.idx;
    return push_node(std::move(out), [px, pw, pb, stride, pad, h, wd, cin, kh, kw, cout, oh,
                                      ow](Tape& t, int self) {
        const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
        const Tensor& vx = t.val(px);
        const Tensor& vw = t.val(pw);
        Tensor& gx = t.grad_buffer(px);
        Tensor& gw = t.grad_buffer(pw);
        Tensor& gb = t.grad_buffer(pb);
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const double* grow = &g.data[(static_cast<size_t>(oy) * ow + ox) * cout];
                for (int oc = 0; oc < cout; ++oc) gb.data[static_cast<size_t>(oc)] += grow[oc];
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= wd) continue;
                        const double* xrow = &vx.data[(static_cast<size_t>(iy) * wd + ix) * cin];
                        double* gxrow = &gx.data[(static_cast<size_t>(iy) * wd + ix) * cin];
                        const size_t wbase = (static_cast<size_t>(ky) * kw + kx) * cin * cout;
                        for (int ic = 0; ic < cin; ++ic) {
                            const double* wrow = &vw.data[wbase + static_cast<size_t>(ic) * cout];
                            double* gwrow = &gw.data[wbase + static_cast<size_t>(ic) * cout];
                            const double xv = xrow[ic];
                            double acc = 0.0;
                            for (int oc = 0; oc < cout; ++oc) {
                                const double gv = grow[oc];
                                acc += gv * wrow[oc];
                                gwrow[oc] += gv * xv;
                            }
                            gxrow[ic] += acc;
                        }
                    }
                }
            }
    });
}

Var Tape::conv2d_transpose(Var x, Var w, Var b, int stride, int pad) {
    check(x);
    check(w);
    check(b);
    const Tensor& tx = val(x.idx);
    const Tensor& tw = val(w.idx);
    const Tensor& tb = val(b.idx);
    if (tx.rank() != 3 || tw.rank() != 4 || tb.rank() != 1)
        throw std::invalid_argument("conv2d_transpose: bad tensor ranks");
    const int h = tx.dim(0), wd = tx.dim(1), cin = tx.dim(2);
    const int kh = tw.dim(0), kw = tw.dim(1), cout = tw.dim(3);
    if (tw.dim(2) != cin || tb.dim(0) != cout)
        throw std::invalid_argument("conv2d_transpose: channel mismatch");
    const int oh = (h - 1) * stride + kh - 2 * pad;
    const int ow = (wd - 1) * stride + kw - 2 * pad;
    if (stride < 1 || pad < 0 || oh <= 0 || ow <= 0)
        throw std::invalid_argument("conv2d_transpose: bad geometry");

    Tensor out({oh, ow, cout});
    for (int oy = 0; oy < oh; ++oy) {
        double* yrow = &out.data[static_cast<size_t>(oy) * ow * cout];
        for (int ox = 0; ox < ow; ++ox)
            for (int oc = 0; oc < cout; ++oc) yrow[static_cast<size_t>(ox) * cout + oc] = tb.data[static_cast<size_t>(oc)];
    }
    for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < wd; ++ix) {
            const double* xrow = &tx.data[(static_cast<size_t>(iy) * wd + ix) * cin];
            for (int ky = 0; ky < kh; ++ky) {
                const int oy = iy * stride + ky - pad;
                if (oy < 0 || oy >= oh) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ox = ix * stride + kx - pad;
                    if (ox < 0 || ox >= ow) continue;
                    double* yrow = &out.data[(static_cast<size_t>(oy) * ow + ox) * cout];
                    const size_t wbase = (static_cast<size_t>(ky) * kw + kx) * cin * cout;
                    for (int ic = 0; ic < cin; ++ic) {
                        const double xv = xrow[ic];
                        if (xv == 0.0) continue;
                        const double* wrow = &tw.data[wbase + static_cast<size_t>(ic) * cout];
                        for (int oc = 0; oc < cout; ++oc) yrow[oc] += xv * wrow[oc];
                    }
                }
            }
        }

    const int px = x.idx, pw = w.idx, pb = b.idx;
    return push_node(std::move(out), [px, pw, pb, stride, pad, h, wd, cin, kh, kw, cout, oh,
                                      ow](Tape& t, int self) {
        const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
        const Tensor& vx = t.val(px);
        const Tensor& vw = t.val(pw);
        Tensor& gx = t.grad_buffer(px);
        Tensor& gw = t.grad_buffer(pw);
        Tensor& gb = t.grad_buffer(pb);
        for (size_t i = 0; i < g.data.size(); ++i)
            gb.data[i % static_cast<size_t>(cout)] += g.data[i];
        for (int iy = 0; iy < h; ++iy)
            for (int ix = 0; ix < wd; ++ix) {
                const double* xrow = &vx.data[(static_cast<size_t>(iy) * wd + ix) * cin];
                double* gxrow = &gx.data[(static_cast<size_t>(iy) * wd + ix) * cin];
                for (int ky = 0; ky < kh; ++ky) {
                    const int oy = iy * stride + ky - pad;
                    if (oy < 0 || oy >= oh) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ox = ix * stride + kx - pad;
                        if (ox < 0 || ox >= ow) continue;
                        const double* grow = &g.data[(static_cast<size_t>(oy) * ow + ox) * cout];
                        const size_t wbase = (static_cast<size_t>(ky) * kw + kx) * cin * cout;
                        for (int ic = 0; ic < cin; ++ic) {
                            const double* wrow = &vw.data[wbase + static_cast<size_t>(ic) * cout];
                            double* gwrow = &gw.data[wbase + static_cast<size_t>(ic) * cout];
                            const double xv = xrow[ic];
                            double acc = 0.0;
                            for (int oc = 0; oc < cout; ++oc) {
                                const double gv = grow[oc];
                                acc += gv * wrow[oc];
                                gwrow[oc] += gv * xv;
                            }
                            gxrow[ic] += acc;
                        }
                    }
                }
            }
    });
}

void Tape::backward(Var root) {
    check(root);
    if (val(root.idx).numel() != 1)
        throw std::invalid_argument("backward: root must be a scalar node");
    Tensor seed({1});
    seed.data[0] = 1.0;
    backward({{root, seed}});
}

void Tape::backward(const std::vector<std::pair<Var, Tensor>>& seeds) {
    if (backward_done_) throw std::logic_error("backward: tape already swept");
    backward_done_ = true;
    for (const auto& [v, g] : seeds) {
        check(v);
        if (!val(v.idx).same_shape(g)) throw std::invalid_argument("backward: seed shape mismatch");
        Tensor& buf = grad_buffer(v.idx);
        for (size_t i = 0; i < buf.data.size(); ++i) buf.data[i] += g.data[i];
    }
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.has_grad && n.back) n.back(*this, i);
    }
}

}  // namespace ldp
