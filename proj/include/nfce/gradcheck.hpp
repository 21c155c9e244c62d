#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nfce/layers.hpp"
#include "nfce/model.hpp"
#include "nfce/params.hpp"
#include "nfce/rng.hpp"

namespace nfce {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;

    bool pass() const { return max_rel_err < 1e-4; }
};

namespace detail_gc {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Central-difference check of d(loss)/d(param) for every trainable tensor.
// probe_cap limits how many elements per tensor are perturbed (0 = all),
// chosen evenly across the tensor so large groups stay affordable.
inline double check_store(const ParamStore& ps,
                          const std::function<Var(Tape&, Binder&)>& loss_fn,
                          std::size_t probe_cap = 0) {
    auto loss_value = [&](ParamStore store) {
        Tape tape;
        Binder bind(tape, store);
        Var loss = loss_fn(tape, bind);
        NFCE_REQUIRE(tape.val(loss).size() == 1, "gradcheck: loss must be scalar");
        return tape.val(loss)[0];
    };

    ParamStore ad_store = ps;
    Tape tape;
    Binder bind(tape, ad_store);
    const auto grads = tape.grad(loss_fn(tape, bind));

    const double h = 1e-5;
    double worst = 0.0;
    for (const auto& [name, tensor] : ps.all()) {
        if (!ps.is_trainable(name)) continue;
        const Tensor& g = grads.at(name);
        const std::size_t probes =
            (probe_cap == 0) ? tensor.size() : std::min(tensor.size(), probe_cap);
        for (std::size_t p = 0; p < probes; ++p) {
            const std::size_t i = p * tensor.size() / probes;
            ParamStore plus = ps;
            plus.get(name)[i] += h;
            ParamStore minus = ps;
            minus.get(name)[i] -= h;
            const double fd =
                (loss_value(std::move(plus)) - loss_value(std::move(minus))) / (2.0 * h);
            const double rel = std::abs(g[i] - fd) / std::max(1.0, std::abs(fd));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

// Scalarizes an arbitrary forward output with a fixed random weighting so
// every output element influences the loss.
inline std::function<Var(Tape&, Binder&)> weighted(
    const std::function<Var(Tape&, Binder&)>& fwd, const Tensor& weights) {
    return [fwd, weights](Tape& t, Binder& b) {
        Var out = fwd(t, b);
        NFCE_REQUIRE(t.val(out).shape() == weights.shape(),
                     "gradcheck: scalarization weight shape mismatch");
        return t.sum_all(t.mul(out, t.leaf(weights)));
    };
}

}  // namespace detail_gc

// Finite-difference check of the full estimator (MSE loss) on a miniature
// configuration; probes a spread of elements in every parameter group.
inline double model_grad_check(Ablation ablation, std::uint64_t seed) {
    ModelConfig mc;
    mc.l_conv = 2;
    mc.c1 = 3;
    mc.kernel = 3;
    mc.n_heads = 3;
    mc.d_h = 4;
    mc.pos_width = 3;
    mc.dense_hidden = 5;
    mc.t_history = 3;
    const std::size_t n = 3, q = 2, b = 2;

    EstimatorNet net(mc, n, q, ablation);
    ParamStore ps;
    Rng rng(seed);
    net.init(ps, rng);

    const Tensor images = detail_gc::random_tensor({b, mc.t_history, 2, n, q}, seed + 11);
    const Tensor positions =
        detail_gc::random_tensor({b, 6}, seed + 23, -20.0, 20.0);
    const Tensor target = detail_gc::random_tensor({b, 2 * n * q}, seed + 37);

    auto loss_fn = [&](Tape& t, Binder& bind) {
        Var out = net.forward(t, bind, t.leaf(images), t.leaf(positions), /*train=*/true);
        Var diff = t.sub(out, t.leaf(target));
        return t.scale(t.sum_all(t.square(diff)), 1.0 / static_cast<double>(b));
    };
    return detail_gc::check_store(ps, loss_fn, /*probe_cap=*/4);
}

// Per-layer and end-to-end finite-difference suite; every entry must come
// back with max relative error < 1e-4 (64-bit, h = 1e-5).
inline std::vector<GradCheckEntry> run_gradient_suite(std::uint64_t seed_base,
                                                      std::size_t n_seeds) {
    using detail_gc::check_store;
    using detail_gc::random_tensor;
    using detail_gc::weighted;

    std::vector<GradCheckEntry> results;
    auto record = [&](const std::string& name,
                      const std::function<double(std::uint64_t)>& one_seed) {
        double worst = 0.0;
        for (std::size_t s = 0; s < n_seeds; ++s)
            worst = std::max(worst, one_seed(seed_base + s));
        results.push_back({name, worst});
    };

    record("dense", [&](std::uint64_t seed) {
        ParamStore ps;
        Rng rng(seed);
        Dense d{"d", 3, 2};
        d.init(ps, rng);
        const Tensor x = random_tensor({4, 3}, seed + 100);
        return check_store(ps, weighted([&, x](Tape& t, Binder& b) {
                               return d.forward(t, b, t.leaf(x));
                           },
                           random_tensor({4, 2}, seed + 200)));
    });

    record("conv2d", [&](std::uint64_t seed) {
        ParamStore ps;
        Rng rng(seed);
        Conv2d conv{"c", 2, 3, 3};
        conv.init(ps, rng);
        const Tensor x = random_tensor({2, 3, 4, 2}, seed + 100);
        return check_store(ps, weighted([&, x](Tape& t, Binder& b) {
                               return conv.forward(t, b, t.leaf(x));
                           },
                           random_tensor({2, 3, 4, 3}, seed + 200)));
    });

    record("batchnorm", [&](std::uint64_t seed) {
        ParamStore ps;
        BatchNorm bn{"bn", 2};
        bn.init(ps);
        const Tensor x = random_tensor({3, 2, 2, 2}, seed + 100);
        return check_store(ps, weighted([&, x](Tape& t, Binder& b) {
                               return bn.forward(t, b, t.leaf(x), true);
                           },
                           random_tensor({3, 2, 2, 2}, seed + 200)));
    });

    record("mhsa", [&](std::uint64_t seed) {
        ParamStore ps;
        Rng rng(seed);
        Mhsa attn{"a", 4, 2};
        attn.init(ps, rng);
        const Tensor x = random_tensor({2, 3, 4}, seed + 100);
        return check_store(ps, weighted([&, x](Tape& t, Binder& b) {
                               return attn.forward(t, b, t.leaf(x));
                           },
                           random_tensor({2, 3, 4}, seed + 200)));
    });

    record("residual_layernorm", [&](std::uint64_t seed) {
        ParamStore ps;
        ResidualLayerNorm rln{"r", 4};
        rln.init(ps);
        const Tensor x = random_tensor({3, 4}, seed + 100);
        const Tensor sub = random_tensor({3, 4}, seed + 150);
        return check_store(ps, weighted([&, x, sub](Tape& t, Binder& b) {
                               return rln.forward(t, b, t.leaf(x), t.leaf(sub));
                           },
                           random_tensor({3, 4}, seed + 200)));
    });

    record("lstm_cell", [&](std::uint64_t seed) {
        ParamStore ps;
        Rng rng(seed);
        LstmCell cell{"l", 2, 2};
        cell.init(ps, rng);
        const Tensor x0 = random_tensor({2, 2}, seed + 100);
        const Tensor x1 = random_tensor({2, 2}, seed + 130);
        return check_store(ps, weighted([&, x0, x1](Tape& t, Binder& b) {
                               Var h = t.leaf(Tensor::zeros({2, 2}));
                               Var c = t.leaf(Tensor::zeros({2, 2}));
                               auto [h1, c1] = cell.step(t, b, t.leaf(x0), h, c);
                               auto [h2, c2] = cell.step(t, b, t.leaf(x1), h1, c1);
                               (void)c2;
                               return h2;
                           },
                           random_tensor({2, 2}, seed + 200)));
    });

    record("bilstm", [&](std::uint64_t seed) {
        ParamStore ps;
        Rng rng(seed);
        BiLstm rnn{{"f", 2, 2}, {"b", 2, 2}};
        rnn.init(ps, rng);
        const Tensor x0 = random_tensor({2, 2}, seed + 100);
        const Tensor x1 = random_tensor({2, 2}, seed + 130);
        return check_store(ps, weighted([&, x0, x1](Tape& t, Binder& b) {
                               return rnn.forward(t, b, {t.leaf(x0), t.leaf(x1)}).back();
                           },
                           random_tensor({2, 4}, seed + 200)));
    });

    record("position_embed", [&](std::uint64_t seed) {
        ParamStore ps;
        Rng rng(seed);
        PositionEmbed pe{"p", 3};
        pe.init(ps, rng);
        const Tensor x = random_tensor({2, 6}, seed + 100, -10.0, 10.0);
        return check_store(ps, weighted([&, x](Tape& t, Binder& b) {
                               return pe.forward(t, b, t.leaf(x));
                           },
                           random_tensor({2, 3}, seed + 200)));
    });

    record("regression_head", [&](std::uint64_t seed) {
        ParamStore ps;
        Rng rng(seed);
        RegressionHead head{"h", 3, 4, 2};
        head.init(ps, rng);
        const Tensor x = random_tensor({3, 3}, seed + 100);
        return check_store(ps, weighted([&, x](Tape& t, Binder& b) {
                               return head.forward(t, b, t.leaf(x));
                           },
                           random_tensor({3, 2}, seed + 200)));
    });

    record("full_model",
           [&](std::uint64_t seed) { return model_grad_check(Ablation::Full, seed); });

    return results;
}

}  // namespace nfce
