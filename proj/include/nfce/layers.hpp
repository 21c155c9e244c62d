#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "nfce/params.hpp"
#include "nfce/rng.hpp"
#include "nfce/tape.hpp"
#include "nfce/tensor.hpp"

namespace nfce {

// Uniform fan-in initialization: U(-sqrt(1/fan_in), +sqrt(1/fan_in)).
inline Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
    NFCE_REQUIRE(fan_in >= 1, "uniform_init: fan_in must be >= 1");
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

// Broadcast a rank-1 feature vector across the leading axes of x's shape.
inline Var bcast_vec(Tape& t, Var v, const Shape& target) {
    return t.broadcast_to(v, target);
}

// Feature-axis layer normalization with learnable scale/shift; the gradient
// flows through the statistics (they are composed on the tape).
inline Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
    const Shape& s = t.val(x).shape();
    const std::vector<std::size_t> last{s.size() - 1};
    Var mu = t.mean(x, last, /*keepdims=*/true);
    Var centered = t.sub(x, t.broadcast_to(mu, s));
    Var var = t.variance(x, last, /*keepdims=*/true);
    Var rstd = t.pow_const(t.add_scalar(var, eps), -0.5);
    Var norm = t.mul(centered, t.broadcast_to(rstd, s));
    return t.add(t.mul(norm, bcast_vec(t, gamma, s)), bcast_vec(t, beta, s));
}

// y = x W + b over the trailing feature axis.
struct Dense {
    std::string name;
    std::size_t d_in = 0, d_out = 0;

    void init(ParamStore& ps, Rng& rng) const {
        ps.add(name + ".w", uniform_init({d_in, d_out}, d_in, rng));
        ps.add(name + ".b", Tensor::zeros({d_out}));
    }

    Var forward(Tape& t, Binder& bind, Var x) const {
        const Shape& s = t.val(x).shape();
        NFCE_REQUIRE(s.back() == d_in, name + ": input width " + std::to_string(s.back()) +
                                           " != " + std::to_string(d_in));
        Var y = t.matmul(x, bind(name + ".w"));
        return t.add(y, bcast_vec(t, bind(name + ".b"), t.val(y).shape()));
    }
};

// Stride-1 same-padded 2-D cross-correlation on channels-last images
// [B, H, W, C_in] -> [B, H, W, C_out]. Realized as k*k shifted window
// slices, each mapped through its [C_in, C_out] kernel tap.
struct Conv2d {
    std::string name;
    std::size_t c_in = 0, c_out = 0, kernel = 3;

    void init(ParamStore& ps, Rng& rng) const {
        NFCE_REQUIRE(kernel % 2 == 1, name + ": kernel must be odd");
        ps.add(name + ".w",
               uniform_init({kernel, kernel, c_in, c_out}, kernel * kernel * c_in, rng));
        ps.add(name + ".b", Tensor::zeros({c_out}));
    }

    Var forward(Tape& t, Binder& bind, Var x) const {
        const Shape& s = t.val(x).shape();
        NFCE_REQUIRE(s.size() == 4, name + ": input must be [B,H,W,C]");
        NFCE_REQUIRE(s[3] == c_in, name + ": channel mismatch");
        const std::size_t b = s[0], h = s[1], w = s[2], p = (kernel - 1) / 2;

        Var padded = x;
        if (p > 0) {
            Var zh = t.leaf(Tensor::zeros({b, p, w, c_in}));
            padded = t.concat({zh, padded, zh}, 1);
            Var zw = t.leaf(Tensor::zeros({b, h + 2 * p, p, c_in}));
            padded = t.concat({zw, padded, zw}, 2);
        }

        Var weights = bind(name + ".w");
        Var acc{-1};
        for (std::size_t di = 0; di < kernel; ++di)
            for (std::size_t dj = 0; dj < kernel; ++dj) {
                Var tap = t.reshape(t.slice(weights, {di, dj, 0, 0}, {1, 1, c_in, c_out}),
                                    {c_in, c_out});
                Var win = t.slice(padded, {0, di, dj, 0}, {b, h, w, c_in});
                Var term = t.matmul(win, tap);
                acc = (acc.id < 0) ? term : t.add(acc, term);
            }
        return t.add(acc, bcast_vec(t, bind(name + ".b"), t.val(acc).shape()));
    }
};

// Per-channel batch normalization for channels-last images. Train mode
// normalizes by batch statistics (population variance) and updates the
// running buffers with momentum 0.9; eval mode uses the running buffers.
struct BatchNorm {
    std::string name;
    std::size_t channels = 0;
    double momentum = 0.9;
    double eps = 1e-5;

    void init(ParamStore& ps) const {
        ps.add(name + ".gamma", Tensor::full({channels}, 1.0));
        ps.add(name + ".beta", Tensor::zeros({channels}));
        ps.add(name + ".running_mean", Tensor::zeros({channels}), /*trainable=*/false);
        ps.add(name + ".running_var", Tensor::full({channels}, 1.0), /*trainable=*/false);
    }

    Var forward(Tape& t, Binder& bind, Var x, bool train) const {
        const Shape& s = t.val(x).shape();
        NFCE_REQUIRE(s.size() == 4, name + ": input must be [B,H,W,C]");
        NFCE_REQUIRE(s[3] == channels, name + ": channel mismatch");

        Var mu{-1}, var{-1};
        const std::vector<std::size_t> spatial{0, 1, 2};
        if (train) {
            NFCE_REQUIRE(s[0] >= 2, name + ": train mode needs batch >= 2");
            mu = t.mean(x, spatial, /*keepdims=*/true);
            var = t.variance(x, spatial, /*keepdims=*/true);
            update_running(bind.store(), t.val(mu), t.val(var));
        } else {
            ParamStore& ps = bind.store();
            mu = t.leaf(Tensor({1, 1, 1, channels}, ps.get(name + ".running_mean").vec()));
            var = t.leaf(Tensor({1, 1, 1, channels}, ps.get(name + ".running_var").vec()));
        }
        Var centered = t.sub(x, t.broadcast_to(mu, s));
        Var rstd = t.pow_const(t.add_scalar(var, eps), -0.5);
        Var norm = t.mul(centered, t.broadcast_to(rstd, s));
        return t.add(t.mul(norm, bcast_vec(t, bind(name + ".gamma"), s)),
                     bcast_vec(t, bind(name + ".beta"), s));
    }

private:
    void update_running(ParamStore& ps, const Tensor& mu, const Tensor& var) const {
        Tensor& rm = ps.get(name + ".running_mean");
        Tensor& rv = ps.get(name + ".running_var");
        for (std::size_t c = 0; c < channels; ++c) {
            rm[c] = momentum * rm[c] + (1.0 - momentum) * mu[c];
            rv[c] = momentum * rv[c] + (1.0 - momentum) * var[c];
        }
    }
};

// Multi-head self-attention over [B, T, width]: per head softmax(Q K^T /
// sqrt(d_k)) V, heads concatenated and projected. Projections carry no bias.
struct Mhsa {
    std::string name;
    std::size_t width = 0, heads = 1;

    void init(ParamStore& ps, Rng& rng) const {
        NFCE_REQUIRE(width % heads == 0, name + ": heads must divide width");
        for (const char* nm : {".wq", ".wk", ".wv", ".wo"})
            ps.add(name + nm, uniform_init({width, width}, width, rng));
    }

    Var forward(Tape& t, Binder& bind, Var x, Var* attn_out = nullptr) const {
        const Shape& s = t.val(x).shape();
        NFCE_REQUIRE(s.size() == 3 && s[2] == width, name + ": input must be [B,T,width]");
        const std::size_t b = s[0], seq = s[1], dk = width / heads;

        auto split_heads = [&](const char* nm) {
            Var proj = t.matmul(x, bind(name + nm));           // [B,T,width]
            return t.permute(t.reshape(proj, {b, seq, heads, dk}), {0, 2, 1, 3});
        };
        Var q = split_heads(".wq"), k = split_heads(".wk"), v = split_heads(".wv");
        Var scores = t.scale(t.matmul(q, t.permute(k, {0, 1, 3, 2})),
                             1.0 / std::sqrt(static_cast<double>(dk)));
        Var attn = t.softmax_last(scores);                     // [B,heads,T,T]
        if (attn_out) *attn_out = attn;
        Var ctx = t.matmul(attn, v);                           // [B,heads,T,dk]
        Var merged = t.reshape(t.permute(ctx, {0, 2, 1, 3}), {b, seq, width});
        return t.matmul(merged, bind(name + ".wo"));
    }
};

// LayerNorm(x + sub_output) over the feature axis.
struct ResidualLayerNorm {
    std::string name;
    std::size_t width = 0;
    double eps = 1e-5;

    void init(ParamStore& ps) const {
        ps.add(name + ".gamma", Tensor::full({width}, 1.0));
        ps.add(name + ".beta", Tensor::zeros({width}));
    }

    Var forward(Tape& t, Binder& bind, Var x, Var sub) const {
        NFCE_REQUIRE(t.val(x).shape() == t.val(sub).shape(),
                     name + ": residual shapes disagree");
        NFCE_REQUIRE(t.val(x).shape().back() == width, name + ": width mismatch");
        return layer_norm(t, t.add(x, sub), bind(name + ".gamma"), bind(name + ".beta"),
                          eps);
    }
};

// One LSTM cell: sigmoid forget/input/output gates, tanh candidate,
// c_t = f*c + i*g, h_t = o*tanh(c_t). Recurrent terms multiply h_{t-1}.
// The forget-gate bias starts at 1.0 so early training does not flush state.
struct LstmCell {
    std::string name;
    std::size_t d_in = 0, d_h = 0;

    void init(ParamStore& ps, Rng& rng) const {
        for (const char* g : {"f", "i", "c", "o"}) {
            ps.add(name + ".w" + g, uniform_init({d_in, d_h}, d_in, rng));
            ps.add(name + ".u" + g, uniform_init({d_h, d_h}, d_h, rng));
            ps.add(name + ".b" + g, g[0] == 'f' ? Tensor::full({d_h}, 1.0)
                                                : Tensor::zeros({d_h}));
        }
    }

    std::pair<Var, Var> step(Tape& t, Binder& bind, Var x, Var h, Var c) const {
        NFCE_REQUIRE(t.val(x).shape().back() == d_in, name + ": input width mismatch");
        auto gate = [&](const char* g) {
            Var z = t.add(t.matmul(x, bind(name + ".w" + g)),
                          t.matmul(h, bind(name + ".u" + g)));
            return t.add(z, bcast_vec(t, bind(name + ".b" + g), t.val(z).shape()));
        };
        Var f = t.sigmoid(gate("f"));
        Var i = t.sigmoid(gate("i"));
        Var g = t.tanh_(gate("c"));
        Var o = t.sigmoid(gate("o"));
        Var c_t = t.add(t.mul(f, c), t.mul(i, g));
        Var h_t = t.mul(o, t.tanh_(c_t));
        return {h_t, c_t};
    }
};

// Bidirectional LSTM; output at step t concatenates the forward hidden
// state over x_0..x_t with the backward hidden state over x_{T-1}..x_t.
struct BiLstm {
    LstmCell fwd, bwd;

    void init(ParamStore& ps, Rng& rng) const {
        fwd.init(ps, rng);
        bwd.init(ps, rng);
    }

    std::vector<Var> forward(Tape& t, Binder& bind, const std::vector<Var>& xs) const {
        NFCE_REQUIRE(!xs.empty(), "bilstm: empty sequence");
        NFCE_REQUIRE(fwd.d_h == bwd.d_h, "bilstm: direction widths disagree");
        const std::size_t b = t.val(xs[0]).shape()[0];
        const std::size_t n = xs.size();

        std::vector<Var> hf(n), hb(n);
        Var h = t.leaf(Tensor::zeros({b, fwd.d_h}));
        Var c = t.leaf(Tensor::zeros({b, fwd.d_h}));
        for (std::size_t i = 0; i < n; ++i) {
            auto [h2, c2] = fwd.step(t, bind, xs[i], h, c);
            h = h2;
            c = c2;
            hf[i] = h;
        }
        h = t.leaf(Tensor::zeros({b, bwd.d_h}));
        c = t.leaf(Tensor::zeros({b, bwd.d_h}));
        for (std::size_t i = n; i-- > 0;) {
            auto [h2, c2] = bwd.step(t, bind, xs[i], h, c);
            h = h2;
            c = c2;
            hb[i] = h;
        }
        std::vector<Var> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = t.concat({hf[i], hb[i]}, 1);
        return out;
    }
};

// Transceiver-position branch: layer-normalize the raw 6-vector
// [r_uav; r_ue], then dense + ReLU into a compact embedding.
struct PositionEmbed {
    std::string name;
    std::size_t width = 0;
    double eps = 1e-5;

    void init(ParamStore& ps, Rng& rng) const {
        ps.add(name + ".gamma", Tensor::full({6}, 1.0));
        ps.add(name + ".beta", Tensor::zeros({6}));
        Dense{name + ".dense", 6, width}.init(ps, rng);
    }

    Var forward(Tape& t, Binder& bind, Var r) const {
        NFCE_REQUIRE(t.val(r).shape().back() == 6, name + ": positions must be 6-wide");
        Var normed = layer_norm(t, r, bind(name + ".gamma"), bind(name + ".beta"), eps);
        return t.relu(Dense{name + ".dense", 6, width}.forward(t, bind, normed));
    }
};

// Fusion head: concat(temporal feature, position embedding) -> dense+ReLU
// hidden layer -> linear output of width 2NQ.
struct RegressionHead {
    std::string name;
    std::size_t d_in = 0, hidden = 0, d_out = 0;

    void init(ParamStore& ps, Rng& rng) const {
        Dense{name + ".h", d_in, hidden}.init(ps, rng);
        Dense{name + ".out", hidden, d_out}.init(ps, rng);
    }

    Var forward(Tape& t, Binder& bind, Var x) const {
        Var hid = t.relu(Dense{name + ".h", d_in, hidden}.forward(t, bind, x));
        return Dense{name + ".out", hidden, d_out}.forward(t, bind, hid);
    }
};

}  // namespace nfce
