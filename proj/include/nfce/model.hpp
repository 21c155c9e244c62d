#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nfce/config.hpp"
#include "nfce/io.hpp"
#include "nfce/layers.hpp"
#include "nfce/params.hpp"
#include "nfce/serde.hpp"

namespace nfce {

// Closed-form multiply counts for the §-level complexity model: conv cost
// sum_l B*H*W*C_in*C_out*k^2, attention B*T^2*d_model, BiLSTM B*T*d_h^2,
// dense sum_i B*d_in_i*d_out_i (fusion head layers).
struct FlopCounts {
    std::uint64_t conv = 0, attention = 0, bilstm = 0, dense = 0;

    std::uint64_t total() const { return conv + attention + bilstm + dense; }
};

inline FlopCounts estimate_flops(const ModelConfig& mc, std::size_t b, std::size_t h,
                                 std::size_t w) {
    mc.validate();
    NFCE_REQUIRE(b >= 1 && h >= 1 && w >= 1, "estimate_flops: sizes must be >= 1");
    FlopCounts f;
    std::uint64_t c_in = 2;
    for (std::size_t l = 0; l < mc.l_conv; ++l) {
        f.conv += static_cast<std::uint64_t>(b) * h * w * c_in * mc.c1 * mc.kernel *
                  mc.kernel;
        c_in = mc.c1;
    }
    const std::uint64_t d_model = static_cast<std::uint64_t>(mc.c1) * h;
    f.attention = static_cast<std::uint64_t>(b) * mc.t_history * mc.t_history * d_model;
    f.bilstm = static_cast<std::uint64_t>(b) * mc.t_history * mc.d_h * mc.d_h;
    const std::uint64_t fused = 2 * static_cast<std::uint64_t>(mc.d_h) + mc.pos_width;
    f.dense = static_cast<std::uint64_t>(b) *
              (fused * mc.dense_hidden + static_cast<std::uint64_t>(mc.dense_hidden) * 2 * h * w);
    return f;
}

// The channel estimator network and its ablations. All variants share the
// same layer implementations; the ablation only selects which stages run:
//   cnn         conv stack (last slot) -> head
//   racnn       conv -> MHSA + residual LN (last slot) -> head
//   cnn_lstm    conv per slot -> unidirectional LSTM -> head
//   no_position full minus the position branch (zero-width embedding)
//   full        conv -> attention -> BiLSTM -> + position embed -> head
class EstimatorNet {
public:
    EstimatorNet(const ModelConfig& mc, std::size_t n_antennas, std::size_t pilot_len,
                 Ablation ablation)
        : mc_(mc), n_(n_antennas), q_(pilot_len), ablation_(ablation) {
        mc_.validate();
        NFCE_REQUIRE(n_ >= 1 && q_ >= 1, "model: N and Q must be >= 1");
        NFCE_REQUIRE((mc_.c1 * n_) % mc_.n_heads == 0,
                     "model: heads must divide the token width c1 * N");
        std::size_t c_in = 2;
        for (std::size_t l = 0; l < mc_.l_conv; ++l) {
            const std::string tag = std::to_string(l + 1);
            convs_.push_back(Conv2d{"conv" + tag, c_in, mc_.c1, mc_.kernel});
            bns_.push_back(BatchNorm{"bn" + tag, mc_.c1, mc_.bn_momentum, mc_.bn_eps});
            c_in = mc_.c1;
        }
        attn_ = Mhsa{"attn", token_width(), mc_.n_heads};
        attn_ln_ = ResidualLayerNorm{"attn_ln", token_width(), mc_.ln_eps};
        lstm_f_ = LstmCell{"lstm_f", slot_width(), mc_.d_h};
        lstm_b_ = LstmCell{"lstm_b", slot_width(), mc_.d_h};
        pos_ = PositionEmbed{"pos", mc_.pos_width, mc_.ln_eps};
        head_ = RegressionHead{"head", fused_width(), mc_.dense_hidden, output_width()};
    }

    const ModelConfig& config() const { return mc_; }
    Ablation ablation() const { return ablation_; }
    std::size_t n_antennas() const { return n_; }
    std::size_t pilot_len() const { return q_; }

    std::size_t token_width() const { return mc_.c1 * n_; }
    std::size_t output_width() const { return 2 * n_ * q_; }

    // per-slot feature width entering the temporal stage (or the head for
    // the slot-local ablations)
    std::size_t slot_width() const {
        return uses_attention() ? q_ * token_width() : n_ * q_ * mc_.c1;
    }

    std::size_t fused_width() const {
        switch (ablation_) {
            case Ablation::CnnOnly:
            case Ablation::Racnn: return slot_width();
            case Ablation::CnnLstm: return mc_.d_h;
            case Ablation::NoPosition: return 2 * mc_.d_h;
            case Ablation::Full: return 2 * mc_.d_h + mc_.pos_width;
        }
        throw ValidationError("model: unknown ablation");
    }

    bool uses_attention() const {
        return ablation_ == Ablation::Full || ablation_ == Ablation::Racnn ||
               ablation_ == Ablation::NoPosition;
    }
    bool uses_temporal() const {
        return ablation_ == Ablation::Full || ablation_ == Ablation::NoPosition ||
               ablation_ == Ablation::CnnLstm;
    }
    bool uses_position() const { return ablation_ == Ablation::Full; }

    void init(ParamStore& ps, Rng& rng) const {
        for (std::size_t l = 0; l < convs_.size(); ++l) {
            convs_[l].init(ps, rng);
            bns_[l].init(ps);
        }
        if (uses_attention()) {
            attn_.init(ps, rng);
            attn_ln_.init(ps);
        }
        if (uses_temporal()) {
            lstm_f_.init(ps, rng);
            if (ablation_ != Ablation::CnnLstm) lstm_b_.init(ps, rng);
        }
        if (uses_position()) pos_.init(ps, rng);
        head_.init(ps, rng);
    }

    // images [B, T_history, 2, N, Q]; positions [B, 6] for the latest slot.
    Var forward(Tape& t, Binder& bind, Var images, Var positions, bool train) const {
        const Shape& s = t.val(images).shape();
        NFCE_REQUIRE(s.size() == 5, "model: images must be [B,T,2,N,Q]");
        NFCE_REQUIRE(s[1] == mc_.t_history,
                     "model: window length " + std::to_string(s[1]) + " != t_history " +
                         std::to_string(mc_.t_history));
        NFCE_REQUIRE(s[2] == 2 && s[3] == n_ && s[4] == q_, "model: image plane shape");
        const std::size_t b = s[0];
        std::size_t steps = mc_.t_history;

        Var x = images;
        if (!uses_temporal()) {  // slot-local ablations see the latest slot only
            x = t.slice(images, {0, steps - 1, 0, 0, 0}, {b, 1, 2, n_, q_});
            steps = 1;
        }
        Var img = t.permute(t.reshape(x, {b * steps, 2, n_, q_}), {0, 2, 3, 1});
        for (std::size_t l = 0; l < convs_.size(); ++l)
            img = t.relu(bns_[l].forward(t, bind, convs_[l].forward(t, bind, img), train));

        Var feat{-1};
        if (uses_attention()) {
            Var tokens =
                t.reshape(t.permute(img, {0, 2, 1, 3}), {b * steps, q_, token_width()});
            Var mixed = attn_ln_.forward(t, bind, tokens, attn_.forward(t, bind, tokens));
            feat = t.reshape(mixed, {b * steps, slot_width()});
        } else {
            feat = t.reshape(img, {b * steps, slot_width()});
        }

        Var fused{-1};
        if (!uses_temporal()) {
            fused = feat;
        } else {
            Var seq = t.reshape(feat, {b, steps, slot_width()});
            std::vector<Var> xs(steps);
            for (std::size_t i = 0; i < steps; ++i)
                xs[i] = t.reshape(t.slice(seq, {0, i, 0}, {b, 1, slot_width()}),
                                  {b, slot_width()});
            if (ablation_ == Ablation::CnnLstm) {
                Var h = t.leaf(Tensor::zeros({b, mc_.d_h}));
                Var c = t.leaf(Tensor::zeros({b, mc_.d_h}));
                for (std::size_t i = 0; i < steps; ++i) {
                    auto [h2, c2] = lstm_f_.step(t, bind, xs[i], h, c);
                    h = h2;
                    c = c2;
                }
                fused = h;
            } else {
                fused = BiLstm{lstm_f_, lstm_b_}.forward(t, bind, xs).back();
            }
            if (uses_position()) {
                NFCE_REQUIRE((t.val(positions).shape() == Shape{b, 6}),
                             "model: positions must be [B,6]");
                fused = t.concat({fused, pos_.forward(t, bind, positions)}, 1);
            }
        }
        return head_.forward(t, bind, fused);
    }

private:
    ModelConfig mc_;
    std::size_t n_ = 0, q_ = 0;
    Ablation ablation_ = Ablation::Full;
    std::vector<Conv2d> convs_;
    std::vector<BatchNorm> bns_;
    Mhsa attn_;
    ResidualLayerNorm attn_ln_;
    LstmCell lstm_f_, lstm_b_;
    PositionEmbed pos_;
    RegressionHead head_;
};

// A trained model plus everything needed to run it standalone: the
// architecture description and the parameter store (including BN running
// buffers and the dataset input-normalization blobs under "input.*").
struct Checkpoint {
    ModelConfig model;
    Ablation ablation = Ablation::Full;
    std::size_t n_antennas = 0, pilot_len = 0;
    ParamStore params;
};

inline json checkpoint_header_json(const Checkpoint& c) {
    return json{{"model", to_json(c.model)},
                {"ablation", ablation_name(c.ablation)},
                {"n_antennas", c.n_antennas},
                {"pilot_len", c.pilot_len}};
}

// Layout: magic "NFCKPT", u32 version, architecture JSON text, u32 blob
// count, then per blob: name text, u8 trainable flag, u32 rank, u64 dims,
// f64 payload. Everything little-endian.
inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
    BinWriter w(path);
    w.bytes("NFCKPT", 6);
    w.u32(1);
    w.text(canonical_dump(checkpoint_header_json(c)));
    w.u32(static_cast<std::uint32_t>(c.params.all().size()));
    for (const auto& [name, tensor] : c.params.all()) {
        w.text(name);
        w.u8(c.params.is_trainable(name) ? 1 : 0);
        w.u32(static_cast<std::uint32_t>(tensor.rank()));
        for (std::size_t d : tensor.shape()) w.u64(d);
        for (std::size_t i = 0; i < tensor.size(); ++i) w.f64(tensor[i]);
    }
    w.close();
}

inline Checkpoint load_checkpoint(const std::string& path) {
    BinReader r(path);
    r.expect_magic("NFCKPT", 6, "checkpoint " + path);
    const std::uint32_t version = r.u32();
    if (version != 1)
        throw IoError("checkpoint " + path + ": unsupported version " +
                      std::to_string(version));

    Checkpoint c;
    json header;
    try {
        header = json::parse(r.text());
    } catch (const json::exception& e) {
        throw IoError("checkpoint " + path + ": bad header: " + e.what());
    }
    detail::check_keys(header, {"model", "ablation", "n_antennas", "pilot_len"},
                       "checkpoint header");
    c.model = model_config_from_json(header.at("model"), "checkpoint model");
    c.ablation = ablation_from_name(header.at("ablation").get<std::string>());
    c.n_antennas = header.at("n_antennas").get<std::size_t>();
    c.pilot_len = header.at("pilot_len").get<std::size_t>();

    const std::uint32_t blobs = r.u32();
    for (std::uint32_t i = 0; i < blobs; ++i) {
        const std::string name = r.text();
        const bool trainable = r.u8() != 0;
        const std::uint32_t rank = r.u32();
        if (rank == 0 || rank > 8)
            throw IoError("checkpoint " + path + ": implausible rank for blob " + name);
        Shape shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d)
            shape[d] = static_cast<std::size_t>(r.u64());
        Tensor tensor(shape);
        for (std::size_t k = 0; k < tensor.size(); ++k) tensor[k] = r.f64();
        c.params.add(name, std::move(tensor), trainable);
    }
    r.expect_eof("checkpoint " + path);
    return c;
}

// Cross-checks a loaded checkpoint against a freshly initialized store for
// the same architecture: every expected parameter present with the right
// shape and trainability. Entries under "input." are dataset statistics and
// are allowed extras.
inline void validate_checkpoint_shapes(const Checkpoint& c) {
    EstimatorNet net(c.model, c.n_antennas, c.pilot_len, c.ablation);
    ParamStore expected;
    Rng rng(0);
    net.init(expected, rng);
    for (const auto& [name, tensor] : expected.all()) {
        NFCE_REQUIRE(c.params.has(name), "checkpoint missing parameter: " + name);
        NFCE_REQUIRE(c.params.get(name).shape() == tensor.shape(),
                     "checkpoint shape mismatch for " + name);
        NFCE_REQUIRE(c.params.is_trainable(name) == expected.is_trainable(name),
                     "checkpoint trainability mismatch for " + name);
    }
    for (const auto& [name, tensor] : c.params.all())
        NFCE_REQUIRE(expected.has(name) || name.rfind("input.", 0) == 0,
                     "checkpoint has unexpected parameter: " + name);
}

}  // namespace nfce
