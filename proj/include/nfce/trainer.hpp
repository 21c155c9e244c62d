#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "nfce/adam.hpp"
#include "nfce/dataset.hpp"
#include "nfce/io.hpp"
#include "nfce/model.hpp"

namespace nfce {

// Shortest round-trippable decimal form, used for every CSV we emit so that
// deterministic runs stay byte-identical.
inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Squared Frobenius norm of (pred - target) on the stacked [Re; Im]
// representation, averaged over the batch axis. A single estimate enters as
// batch 1 and contributes its plain sum of squares.
inline Var mse_loss(Tape& t, Var pred, Var target) {
    const Shape& sp = t.val(pred).shape();
    NFCE_REQUIRE((sp == t.val(target).shape()), "mse_loss: shape mismatch");
    NFCE_REQUIRE(sp.size() == 2 && sp[0] >= 1, "mse_loss: expected [batch, width]");
    return t.scale(t.sum_all(t.square(t.sub(pred, target))),
                   1.0 / static_cast<double>(sp[0]));
}

inline double mse_loss_value(const Tensor& pred, const Tensor& target) {
    NFCE_REQUIRE(pred.same_shape(target), "mse_loss: shape mismatch");
    NFCE_REQUIRE(pred.rank() == 2 && pred.dim(0) >= 1, "mse_loss: expected [batch, width]");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        s += d * d;
    }
    return s / static_cast<double>(pred.dim(0));
}

// One training sample: the window of t_history consecutive slots ending at
// last_slot within one episode.
struct WindowRef {
    std::size_t episode = 0;
    std::size_t last_slot = 0;
};

inline std::vector<WindowRef> extract_windows(const Dataset& ds, std::size_t t_history,
                                              bool val_split) {
    NFCE_REQUIRE(t_history >= 1, "extract_windows: t_history must be >= 1");
    std::vector<WindowRef> out;
    for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
        if (ds.meta.is_val(e) != val_split) continue;
        const std::size_t slots = ds.episodes[e].slots.size();
        NFCE_REQUIRE(slots >= t_history,
                     "extract_windows: episode " + std::to_string(e) +
                         " shorter than the history window");
        for (std::size_t last = t_history - 1; last < slots; ++last)
            out.push_back({e, last});
    }
    return out;
}

struct BatchTensors {
    Tensor images;     // [B, T, 2, N, Q]
    Tensor positions;  // [B, 6]
    Tensor targets;    // [B, 2NQ]
};

// Normalized per-slot inputs cached once; batches are then assembled by
// plain copies in window order.
class SlotCache {
public:
    explicit SlotCache(const Dataset& ds) : SlotCache(ds, ds.meta) {}

    // norm_meta supplies the input normalization; evaluating a trained model
    // on freshly generated data must reuse the statistics it was trained
    // with, not the new dataset's own.
    SlotCache(const Dataset& ds, const DatasetMeta& norm_meta) {
        NFCE_REQUIRE(norm_meta.finalized(), "slot cache: dataset meta not finalized");
        NFCE_REQUIRE(!ds.episodes.empty(), "slot cache: empty dataset");
        slots_per_ep_ = ds.episodes.front().slots.size();
        NFCE_REQUIRE(slots_per_ep_ >= 1, "slot cache: empty episode");
        const SlotRecord& first = ds.episodes.front().slots.front();
        n_ = first.h_true.rows;
        q_ = first.h_true.cols;
        cache_.reserve(ds.episodes.size() * slots_per_ep_);
        for (const Episode& ep : ds.episodes) {
            NFCE_REQUIRE(ep.slots.size() == slots_per_ep_,
                         "slot cache: ragged episode lengths");
            for (const SlotRecord& slot : ep.slots)
                cache_.push_back(preprocess(slot, norm_meta));
        }
    }

    std::size_t n_antennas() const { return n_; }
    std::size_t pilot_len() const { return q_; }
    std::size_t slots_per_episode() const { return slots_per_ep_; }

    const ModelInput& at(std::size_t episode, std::size_t slot) const {
        return cache_[episode * slots_per_ep_ + slot];
    }

    BatchTensors gather(const std::vector<WindowRef>& windows, std::size_t begin,
                        std::size_t count, std::size_t t_history) const {
        NFCE_REQUIRE(begin + count <= windows.size(), "slot cache: batch out of range");
        const std::size_t plane = 2 * n_ * q_;
        BatchTensors out{Tensor({count, t_history, 2, n_, q_}), Tensor({count, 6}),
                         Tensor({count, plane})};
        for (std::size_t b = 0; b < count; ++b) {
            const WindowRef w = windows[begin + b];
            for (std::size_t step = 0; step < t_history; ++step) {
                const ModelInput& mi = at(w.episode, w.last_slot + 1 - t_history + step);
                std::copy(mi.image.data(), mi.image.data() + plane,
                          out.images.data() + (b * t_history + step) * plane);
            }
            const ModelInput& last = at(w.episode, w.last_slot);
            std::copy(last.positions.data(), last.positions.data() + 6,
                      out.positions.data() + b * 6);
            std::copy(last.target.data(), last.target.data() + plane,
                      out.targets.data() + b * plane);
        }
        return out;
    }

private:
    std::vector<ModelInput> cache_;
    std::size_t slots_per_ep_ = 0, n_ = 0, q_ = 0;
};

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::vector<double> seconds;     // wall clock, excluded from determinism
    std::size_t best_epoch = 0;      // 0-based index of the best validation loss
};

struct TrainResult {
    Checkpoint checkpoint;  // parameters from the best-validation epoch
    TrainHistory history;
};

using EpochHook =
    std::function<void(std::size_t epoch, const Checkpoint&, const TrainHistory&)>;

namespace detail_train {

inline constexpr std::uint64_t kInitLane = 1ULL << 40;
inline constexpr std::uint64_t kShuffleLane = 1ULL << 41;

inline void shuffle_windows(std::vector<WindowRef>& windows, Rng& rng) {
    for (std::size_t i = windows.size(); i > 1; --i)
        std::swap(windows[i - 1], windows[rng.below(i)]);
}

inline double batch_loss(const EstimatorNet& net, Binder& bind, Tape& t,
                         const BatchTensors& batch, bool train,
                         std::map<std::string, Tensor>* grads_out) {
    Var pred = net.forward(t, bind, t.leaf(batch.images), t.leaf(batch.positions), train);
    Var loss = mse_loss(t, pred, t.leaf(batch.targets));
    const double value = t.val(loss)[0];
    if (grads_out) *grads_out = t.grad(loss);
    return value;
}

}  // namespace detail_train

// Supervised loop: seeded shuffle of stride-1 windows, Adam updates, one
// validation pass per epoch with batch norm in eval mode, best-validation
// parameters kept. Deterministic given the seed; wall clock is recorded but
// never feeds back into the computation.
inline TrainResult train_model(const Dataset& ds, const ModelConfig& mc,
                               const TrainConfig& tc, const EpochHook& hook = nullptr) {
    mc.validate();
    tc.validate();
    const SlotCache cache(ds);
    NFCE_REQUIRE(mc.t_history <= cache.slots_per_episode(),
                 "train: t_history exceeds episode length");

    std::vector<WindowRef> train_windows = extract_windows(ds, mc.t_history, false);
    const std::vector<WindowRef> val_windows = extract_windows(ds, mc.t_history, true);
    NFCE_REQUIRE(!train_windows.empty(), "train: no training windows");
    NFCE_REQUIRE(!val_windows.empty(), "train: no validation windows");

    const EstimatorNet net(mc, cache.n_antennas(), cache.pilot_len(), tc.ablation);
    ParamStore ps;
    {
        Rng init_rng(derive_seed(tc.seed, detail_train::kInitLane));
        net.init(ps, init_rng);
    }
    Adam opt({tc.lr});

    auto run_split = [&](const std::vector<WindowRef>& windows, bool train) {
        double sum = 0.0;
        std::size_t seen = 0, batch_index = 0;
        for (std::size_t begin = 0; begin < windows.size(); begin += tc.batch) {
            std::size_t count = std::min(tc.batch, windows.size() - begin);
            if (train && count < 2) break;  // batch-norm floor; drop the straggler
            const BatchTensors batch = cache.gather(windows, begin, count, mc.t_history);
            Tape t;
            Binder bind(t, ps);
            std::map<std::string, Tensor> grads;
            const double value = detail_train::batch_loss(net, bind, t, batch, train,
                                                          train ? &grads : nullptr);
            if (!std::isfinite(value))
                throw NumericError("train: non-finite loss in batch " +
                                   std::to_string(batch_index));
            if (train) {
                for (auto it = grads.begin(); it != grads.end();)
                    it = ps.is_trainable(it->first) ? std::next(it) : grads.erase(it);
                opt.step(ps, grads);
            }
            sum += value * static_cast<double>(count);
            seen += count;
            ++batch_index;
        }
        NFCE_REQUIRE(seen > 0, "train: no usable batches");
        return sum / static_cast<double>(seen);
    };

    TrainResult out;
    out.checkpoint.model = mc;
    out.checkpoint.ablation = tc.ablation;
    out.checkpoint.n_antennas = cache.n_antennas();
    out.checkpoint.pilot_len = cache.pilot_len();

    double best_val = std::numeric_limits<double>::infinity();
    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        if (tc.cosine_lr) {
            const double frac = static_cast<double>(epoch) /
                                static_cast<double>(tc.epochs);
            const double floor = tc.lr / 100.0;
            opt.set_lr(floor + 0.5 * (tc.lr - floor) * (1.0 + std::cos(M_PI * frac)));
        }
        {
            Rng shuffle_rng(derive_seed(tc.seed, detail_train::kShuffleLane + epoch));
            detail_train::shuffle_windows(train_windows, shuffle_rng);
        }
        double train_loss = 0.0, val_loss = 0.0;
        try {
            train_loss = run_split(train_windows, true);
            val_loss = run_split(val_windows, false);
        } catch (const NumericError& e) {
            throw NumericError("train: epoch " + std::to_string(epoch + 1) + ": " +
                               e.what());
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                .count();

        out.history.train_loss.push_back(train_loss);
        out.history.val_loss.push_back(val_loss);
        out.history.seconds.push_back(secs);
        if (val_loss < best_val) {
            best_val = val_loss;
            out.history.best_epoch = epoch;
            out.checkpoint.params = ps;
        }
        if (hook) hook(epoch, out.checkpoint, out.history);
    }

    // dataset statistics ride along so the checkpoint can preprocess raw
    // observations standalone
    out.checkpoint.params.add("input.norm_mean",
                              Tensor({2}, {ds.meta.norm_mean[0], ds.meta.norm_mean[1]}),
                              /*trainable=*/false);
    out.checkpoint.params.add("input.norm_scale",
                              Tensor({2}, {ds.meta.norm_scale[0], ds.meta.norm_scale[1]}),
                              /*trainable=*/false);
    out.checkpoint.params.add("input.signal_power", Tensor({1}, {ds.meta.signal_power}),
                              /*trainable=*/false);
    return out;
}

inline void write_history_csv(const TrainHistory& h, const std::string& path) {
    std::string text = "epoch,train_loss,val_loss,seconds\n";
    for (std::size_t i = 0; i < h.train_loss.size(); ++i)
        text += std::to_string(i + 1) + "," + fmt_double(h.train_loss[i]) + "," +
                fmt_double(h.val_loss[i]) + "," + fmt_double(h.seconds[i]) + "\n";
    write_text_file(path, text);
}

// Order-stable content hash over names, shapes, and raw values; used to
// assert that evaluation passes leave parameters untouched.
inline std::uint64_t param_store_hash(const ParamStore& ps) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, std::size_t nbytes) {
        const auto* c = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < nbytes; ++i) {
            h ^= c[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, tensor] : ps.all()) {
        mix(name.data(), name.size());
        for (std::size_t d : tensor.shape()) mix(&d, sizeof d);
        mix(tensor.data(), tensor.size() * sizeof(double));
    }
    return h;
}

}  // namespace nfce
