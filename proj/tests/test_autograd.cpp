#include <doctest.h>

#include "ldp/autograd.hpp"
#include "ldp/random.hpp"
#include "support/gradcheck.hpp"

using namespace ldp;
using ldp::testing::grad_max_rel_err;

namespace {
RandomSource rng(20240);
}

TEST_CASE("elementwise chain gradient") {
    const Tensor x = rng.uniform_tensor({3, 4}, -1.0, 1.0);
    const Tensor other = rng.uniform_tensor({3, 4}, 0.5, 1.5);
    const double err = grad_max_rel_err(x, [&](Tape& t, Var v) {
        Var o = t.input(other);
        Var y = t.mul(t.add(t.silu(v), t.square(v)), o);
        y = t.sub(y, t.scale(t.sigmoid(v), 0.7));
        y = t.add_const(t.exp(t.scale(v, 0.3)), 0.1);
        return t.mean(y);
    });
    CHECK(err < 1e-3);
}

TEST_CASE("softmax, slice, channel bias gradients") {
    const Tensor x = rng.uniform_tensor({2, 2, 5}, -2.0, 2.0);
    const Tensor bias = rng.uniform_tensor({5}, -0.5, 0.5);
    const double err = grad_max_rel_err(x, [&](Tape& t, Var v) {
        Var b = t.input(bias);
        Var y = t.softmax_channels(t.add_channel_bias(v, b));
        Var s = t.slice_channels(y, 1, 4);
        return t.mean(t.square(s));
    });
    CHECK(err < 1e-3);

    // bias gradient
    const double err_b = grad_max_rel_err(bias, [&](Tape& t, Var b) {
        Var v = t.input(x);
        Var y = t.softmax_channels(t.add_channel_bias(v, b));
        return t.mean(t.square(t.slice_channels(y, 0, 3)));
    });
    CHECK(err_b < 1e-3);
}

TEST_CASE("softmax output sums to one") {
    Tape t;
    Var x = t.input(rng.uniform_tensor({3, 3, 7}, -3.0, 3.0));
    const Tensor& y = t.value(t.softmax_channels(x));
    for (int i = 0; i < 9; ++i) {
        double s = 0.0;
        for (int k = 0; k < 7; ++k) s += y.data[static_cast<size_t>(i) * 7 + k];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("reduce_max routes gradient to the arg max") {
    Tensor x = rng.uniform_tensor({4, 4}, 0.0, 1.0);
    x.at(2, 1) = 5.0;  // unique max
    const double err = grad_max_rel_err(x, [](Tape& t, Var v) { return t.reduce_max(t.square(v)); });
    CHECK(err < 1e-3);

    Tape t;
    Var v = t.input(x);
    Var m = t.reduce_max(v);
    CHECK(t.value(m).data[0] == 5.0);
    t.backward(m);
    CHECK(t.grad(v).at(2, 1) == 1.0);
    CHECK(t.grad(v).at(0, 0) == 0.0);
}

TEST_CASE("mean squared error gradient on both sides") {
    const Tensor a = rng.uniform_tensor({6}, -1.0, 1.0);
    const Tensor b = rng.uniform_tensor({6}, -1.0, 1.0);
    const double err_a =
        grad_max_rel_err(a, [&](Tape& t, Var v) { return t.mean_squared_error(v, t.input(b)); });
    const double err_b =
        grad_max_rel_err(b, [&](Tape& t, Var v) { return t.mean_squared_error(t.input(a), v); });
    CHECK(err_a < 1e-3);
    CHECK(err_b < 1e-3);
}

TEST_CASE("dense layer gradients") {
    const Tensor x = rng.uniform_tensor({5}, -1.0, 1.0);
    const Tensor w = rng.uniform_tensor({5, 3}, -1.0, 1.0);
    const Tensor b = rng.uniform_tensor({3}, -0.2, 0.2);
    auto loss = [&](Tape& t, Var xv, Var wv, Var bv) {
        return t.mean(t.silu(t.dense(xv, wv, bv)));
    };
    CHECK(grad_max_rel_err(x, [&](Tape& t, Var v) { return loss(t, v, t.input(w), t.input(b)); }) < 1e-3);
    CHECK(grad_max_rel_err(w, [&](Tape& t, Var v) { return loss(t, t.input(x), v, t.input(b)); }) < 1e-3);
    CHECK(grad_max_rel_err(b, [&](Tape& t, Var v) { return loss(t, t.input(x), t.input(w), v); }) < 1e-3);
}

TEST_CASE("conv2d forward matches a brute-force reference") {
    const int h = 5, w = 6, cin = 2, cout = 3, k = 3, stride = 2, pad = 1;
    const Tensor x = rng.uniform_tensor({h, w, cin}, -1.0, 1.0);
    const Tensor wt = rng.uniform_tensor({k, k, cin, cout}, -1.0, 1.0);
    const Tensor b = rng.uniform_tensor({cout}, -0.5, 0.5);

    Tape t;
    const Tensor& y = t.value(t.conv2d(t.input(x), t.input(wt), t.input(b), stride, pad));
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (w + 2 * pad - k) / stride + 1;
    REQUIRE(y.shape == std::vector<int>{oh, ow, cout});

    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
            for (int oc = 0; oc < cout; ++oc) {
                double ref = b.at(oc);
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx)
                        for (int ic = 0; ic < cin; ++ic) {
                            const int iy = oy * stride + ky - pad;
                            const int ix = ox * stride + kx - pad;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            ref += x.at(iy, ix, ic) *
                                   wt.data[(((static_cast<size_t>(ky) * k + kx) * cin + ic) * cout) + oc];
                        }
                CHECK(y.at(oy, ox, oc) == doctest::Approx(ref).epsilon(1e-12));
            }
}

TEST_CASE("conv2d gradients (stride 1 and 2)") {
    for (int stride : {1, 2}) {
        const Tensor x = rng.uniform_tensor({5, 5, 2}, -1.0, 1.0);
        const Tensor wt = rng.uniform_tensor({3, 3, 2, 3}, -1.0, 1.0);
        const Tensor b = rng.uniform_tensor({3}, -0.2, 0.2);
        auto loss = [&, stride](Tape& t, Var xv, Var wv, Var bv) {
            return t.mean(t.square(t.conv2d(xv, wv, bv, stride, 1)));
        };
        CHECK(grad_max_rel_err(x, [&](Tape& t, Var v) { return loss(t, v, t.input(wt), t.input(b)); }) < 1e-3);
        CHECK(grad_max_rel_err(wt, [&](Tape& t, Var v) { return loss(t, t.input(x), v, t.input(b)); }) < 1e-3);
        CHECK(grad_max_rel_err(b, [&](Tape& t, Var v) { return loss(t, t.input(x), t.input(wt), v); }) < 1e-3);
    }
}

TEST_CASE("conv2d_transpose doubles spatial size and passes gradient checks") {
    const Tensor x = rng.uniform_tensor({3, 4, 3}, -1.0, 1.0);
    const Tensor wt = rng.uniform_tensor({2, 2, 3, 2}, -1.0, 1.0);
    const Tensor b = rng.uniform_tensor({2}, -0.2, 0.2);

    Tape t0;
    const Tensor& y = t0.value(t0.conv2d_transpose(t0.input(x), t0.input(wt), t0.input(b), 2, 0));
    CHECK(y.shape == std::vector<int>{6, 8, 2});

    auto loss = [&](Tape& t, Var xv, Var wv, Var bv) {
        return t.mean(t.square(t.conv2d_transpose(xv, wv, bv, 2, 0)));
    };
    CHECK(grad_max_rel_err(x, [&](Tape& t, Var v) { return loss(t, v, t.input(wt), t.input(b)); }) < 1e-3);
    CHECK(grad_max_rel_err(wt, [&](Tape& t, Var v) { return loss(t, t.input(x), v, t.input(b)); }) < 1e-3);
    CHECK(grad_max_rel_err(b, [&](Tape& t, Var v) { return loss(t, t.input(x), t.input(wt), v); }) < 1e-3);

    // k4 s2 p1 variant used by wider decoders
    const Tensor wt4 = rng.uniform_tensor({4, 4, 3, 2}, -0.5, 0.5);
    Tape t1;
    const Tensor& y4 = t1.value(t1.conv2d_transpose(t1.input(x), t1.input(wt4), t1.input(b), 2, 1));
    CHECK(y4.shape == std::vector<int>{6, 8, 2});
    CHECK(grad_max_rel_err(x, [&](Tape& t, Var v) {
              return t.mean(t.square(t.conv2d_transpose(v, t.input(wt4), t.input(b), 2, 1)));
          }) < 1e-3);
}

TEST_CASE("conv2d_transpose inverts conv2d shape law") {
    // encoder k3 s2 p1 halves, decoder k2 s2 p0 doubles; composition preserves size
    const Tensor x = rng.uniform_tensor({8, 8, 1}, -1.0, 1.0);
    const Tensor w_dn = rng.uniform_tensor({3, 3, 1, 2}, -1.0, 1.0);
    const Tensor w_up = rng.uniform_tensor({2, 2, 2, 1}, -1.0, 1.0);
    const Tensor b2 = rng.uniform_tensor({2}, 0.0, 0.1);
    const Tensor b1 = rng.uniform_tensor({1}, 0.0, 0.1);
    Tape t;
    Var down = t.conv2d(t.input(x), t.input(w_dn), t.input(b2), 2, 1);
    CHECK(t.value(down).shape == std::vector<int>{4, 4, 2});
    Var up = t.conv2d_transpose(down, t.input(w_up), t.input(b1), 2, 0);
    CHECK(t.value(up).shape == std::vector<int>{8, 8, 1});
}

TEST_CASE("reshape keeps data and routes gradient") {
    const Tensor x = rng.uniform_tensor({2, 6}, -1.0, 1.0);
    CHECK(grad_max_rel_err(x, [](Tape& t, Var v) {
              return t.mean(t.square(t.reshape(v, {3, 4})));
          }) < 1e-3);
}

TEST_CASE("backward requires scalar root and runs once") {
    Tape t;
    Var x = t.input(rng.uniform_tensor({2, 2}, 0.0, 1.0));
    CHECK_THROWS_AS(t.backward(x), std::invalid_argument);
    Var s = t.sum(x);
    t.backward(s);
    CHECK_THROWS_AS(t.backward(s), std::logic_error);
}

TEST_CASE("tape evaluation is deterministic") {
    const Tensor x = rng.uniform_tensor({4, 4, 2}, -1.0, 1.0);
    const Tensor wt = rng.uniform_tensor({3, 3, 2, 2}, -1.0, 1.0);
    const Tensor b = rng.uniform_tensor({2}, -0.1, 0.1);
    auto run = [&] {
        Tape t;
        Var y = t.mean(t.silu(t.conv2d(t.input(x), t.input(wt), t.input(b), 1, 1)));
        return t.value(y).data[0];
    };
    CHECK(run() == run());
}
