#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nfce/channel.hpp"
#include "nfce/config.hpp"
#include "nfce/errors.hpp"
#include "nfce/geometry.hpp"
#include "nfce/io.hpp"
#include "nfce/rng.hpp"
#include "nfce/serde.hpp"
#include "nfce/signal.hpp"
#include "nfce/tensor.hpp"

namespace nfce {

struct SlotRecord {
    CMatrix y;       // N x Q received pilot block
    CMatrix h_true;  // N x Q ground-truth channel
    Vec3 r_uav, r_ue;
    Regime regime = Regime::Far;
    std::size_t slot_index = 0;
};

struct Episode {
    std::vector<SlotRecord> slots;
    std::uint64_t seed = 0;
};

// Frozen alongside the binary episode file. Normalization statistics come
// from the train split only; plane 0 is the real part of Y, plane 1 the
// imaginary part. Episode seeds are not stored: they re-derive from `seed`.
struct DatasetMeta {
    std::uint32_t version = 1;
    SystemConfig system;
    double signal_power = 0.0;  // average noiseless per-antenna pilot power
    std::array<double, 2> norm_mean{0.0, 0.0};
    std::array<double, 2> norm_scale{0.0, 0.0};
    std::vector<std::uint32_t> val_episodes;  // sorted, disjoint from train
    std::uint64_t seed = 0;

    bool finalized() const {
        return signal_power > 0.0 && norm_scale[0] > 0.0 && norm_scale[1] > 0.0;
    }

    bool is_val(std::size_t episode) const {
        return std::binary_search(val_episodes.begin(), val_episodes.end(),
                                  static_cast<std::uint32_t>(episode));
    }
};

struct Dataset {
    DatasetMeta meta;
    std::vector<Episode> episodes;
};

// Seed lanes: dataset episodes use indices [0, 2^32); the calibration set
// and the split shuffle live in disjoint index ranges of the same master
// stream so no lane can collide with another.
inline constexpr std::uint64_t kCalibIndexBase = 1ULL << 32;
inline constexpr std::uint64_t kSplitIndex = 1ULL << 33;

inline Vec3 random_unit_vec(Rng& rng) {
    const double z = rng.uniform(-1.0, 1.0);
    const double phi = rng.uniform(0.0, 2.0 * M_PI);
    const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    return {s * std::cos(phi), s * std::sin(phi), z};
}

// UAV at a uniform altitude; UE placed at a uniform random direction and a
// uniform separation in [ue_dist_min, ue_dist_max] so the episode straddles
// the Rayleigh boundary; both endpoints move along random unit directions.
inline TrajectoryState sample_trajectory(const SystemConfig& cfg, Rng& rng) {
    TrajectoryState s;
    s.r_uav = {0.0, 0.0, rng.uniform(cfg.uav_alt_min_m, cfg.uav_alt_max_m)};
    const double sep = rng.uniform(cfg.ue_dist_min_m, cfg.ue_dist_max_m);
    Vec3 u = random_unit_vec(rng);
    if (s.r_uav.z + sep * u.z < 0.0) u.z = -u.z;  // keep the UE above ground
    s.r_ue = s.r_uav + u * sep;
    s.v_uav = random_unit_vec(rng) * cfg.v_uav_mps;
    s.v_ue = random_unit_vec(rng) * cfg.v_ue_mps;
    return s;
}

// Simulates one trajectory from an explicit initial state: slot 0 records
// the initial geometry, later slots advance positions and evolve paths.
// sigma_sq = 0 produces noiseless observations with the same draw sequence.
inline Episode generate_episode_from(const TrajectoryState& init, const SystemConfig& cfg,
                                     std::uint64_t seed, double sigma_sq, Rng& rng) {
    cfg.validate();
    NFCE_REQUIRE(sigma_sq >= 0.0, "generate_episode: sigma_sq must be >= 0");
    const double d_f = rayleigh_distance(cfg.n_antennas, cfg.spacing(), cfg.wavelength_m);
    const double aperture_guard =
        static_cast<double>(cfg.n_antennas) * cfg.spacing() / 2.0;
    const PilotBlock pilots = make_pilots(cfg.pilot_len, cfg.pilot_es());

    Episode ep;
    ep.seed = seed;
    ep.slots.reserve(cfg.slots_per_episode);

    TrajectoryState state = init;
    PathSet paths;
    for (std::size_t t = 0; t < cfg.slots_per_episode; ++t) {
        if (t == 0)
            paths = sample_paths(state, cfg, rng);
        else {
            state = advance_positions(state, cfg.delta_t_s);
            paths = evolve_paths(paths, state, cfg, rng);
        }
        const double sep = state.separation();
        if (sep <= aperture_guard)
            throw ValidationError("generate_episode: UE inside the array aperture at slot " +
                                  std::to_string(t));
        SlotRecord slot;
        slot.slot_index = t;
        slot.r_uav = state.r_uav;
        slot.r_ue = state.r_ue;
        slot.regime = classify_regime(sep, d_f);
        slot.h_true = replicate_channel(synthesize_channel(paths, slot.regime, cfg),
                                        cfg.pilot_len);
        slot.y = receive_block(slot.h_true, pilots, sigma_sq, rng).y;
        ep.slots.push_back(std::move(slot));
    }
    return ep;
}

inline Episode generate_episode_from(const TrajectoryState& init, const SystemConfig& cfg,
                                     std::uint64_t seed, double sigma_sq) {
    Rng rng(seed);
    return generate_episode_from(init, cfg, seed, sigma_sq, rng);
}

inline Episode generate_episode(const SystemConfig& cfg, std::uint64_t seed,
                                double sigma_sq) {
    Rng rng(seed);
    const TrajectoryState init = sample_trajectory(cfg, rng);
    return generate_episode_from(init, cfg, seed, sigma_sq, rng);
}

// Average received per-antenna pilot power over a noiseless calibration set;
// this is the reference power that SNR in dB is measured against.
inline double calibrate_signal_power(const SystemConfig& cfg, std::uint64_t master_seed) {
    cfg.validate();
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < cfg.calib_episodes; ++i) {
        const Episode ep =
            generate_episode(cfg, derive_seed(master_seed, kCalibIndexBase + i), 0.0);
        for (const SlotRecord& slot : ep.slots) {
            acc += slot.y.frob_sq();
            count += slot.y.rows * slot.y.cols;
        }
    }
    NFCE_REQUIRE(count > 0, "calibrate_signal_power: empty calibration set");
    const double power = acc / static_cast<double>(count);
    NFCE_REQUIRE(power > 0.0, "calibrate_signal_power: zero received power");
    return power;
}

// Seeded-shuffle split at episode granularity; floor(val_fraction * E)
// episodes go to validation and the train split keeps the remainder.
inline std::vector<std::uint32_t> assign_val_episodes(std::size_t n_episodes,
                                                      double val_fraction,
                                                      std::uint64_t master_seed) {
    NFCE_REQUIRE(n_episodes >= 1, "assign_val_episodes: need at least 1 episode");
    std::vector<std::uint32_t> order(n_episodes);
    for (std::size_t i = 0; i < n_episodes; ++i) order[i] = static_cast<std::uint32_t>(i);
    Rng rng(derive_seed(master_seed, kSplitIndex));
    for (std::size_t i = n_episodes - 1; i > 0; --i)
        std::swap(order[i], order[rng.below(i + 1)]);
    const auto n_val =
        static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n_episodes)));
    std::vector<std::uint32_t> val(order.begin(), order.begin() + n_val);
    std::sort(val.begin(), val.end());
    return val;
}

inline void compute_normalization(Dataset& ds) {
    double sum[2] = {0.0, 0.0};
    std::size_t count = 0;
    for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
        if (ds.meta.is_val(e)) continue;
        for (const SlotRecord& slot : ds.episodes[e].slots) {
            for (const cplx& v : slot.y.a) {
                sum[0] += v.real();
                sum[1] += v.imag();
            }
            count += slot.y.a.size();
        }
    }
    NFCE_REQUIRE(count > 0, "compute_normalization: empty train split");
    for (int p = 0; p < 2; ++p) ds.meta.norm_mean[p] = sum[p] / static_cast<double>(count);
    double ss[2] = {0.0, 0.0};
    for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
        if (ds.meta.is_val(e)) continue;
        for (const SlotRecord& slot : ds.episodes[e].slots)
            for (const cplx& v : slot.y.a) {
                const double dr = v.real() - ds.meta.norm_mean[0];
                const double di = v.imag() - ds.meta.norm_mean[1];
                ss[0] += dr * dr;
                ss[1] += di * di;
            }
    }
    for (int p = 0; p < 2; ++p) {
        ds.meta.norm_scale[p] = std::sqrt(ss[p] / static_cast<double>(count));
        NFCE_REQUIRE(ds.meta.norm_scale[p] > 0.0,
                     "compute_normalization: degenerate plane variance");
    }
}

inline Dataset build_dataset(const SystemConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    NFCE_REQUIRE(cfg.episodes >= 5, "build_dataset: need at least 5 episodes");
    Dataset ds;
    ds.meta.version = 1;
    ds.meta.system = cfg;
    ds.meta.seed = seed;
    ds.meta.signal_power = calibrate_signal_power(cfg, seed);
    const double sigma_sq = snr_to_sigma_sq(cfg.snr_db, ds.meta.signal_power);
    ds.episodes.reserve(cfg.episodes);
    for (std::size_t i = 0; i < cfg.episodes; ++i)
        ds.episodes.push_back(generate_episode(cfg, derive_seed(seed, i), sigma_sq));
    ds.meta.val_episodes = assign_val_episodes(cfg.episodes, cfg.val_fraction, seed);
    compute_normalization(ds);
    return ds;
}

struct ModelInput {
    Tensor image;      // {2, N, Q}: plane 0 real, plane 1 imaginary, normalized
    Tensor positions;  // {6}: [r_uav; r_ue] in raw meters
    Tensor target;     // {2NQ}: [Re(H) row-major; Im(H) row-major], unnormalized
};

inline ModelInput preprocess(const SlotRecord& slot, const DatasetMeta& meta) {
    NFCE_REQUIRE(meta.finalized(), "preprocess: dataset metadata is not finalized");
    const std::size_t n = slot.y.rows, q = slot.y.cols;
    NFCE_REQUIRE(slot.h_true.rows == n && slot.h_true.cols == q,
                 "preprocess: Y and H shapes disagree");
    ModelInput out;
    out.image = Tensor::zeros({2, n, q});
    for (std::size_t i = 0; i < n * q; ++i) {
        out.image[i] = (slot.y.a[i].real() - meta.norm_mean[0]) / meta.norm_scale[0];
        out.image[n * q + i] = (slot.y.a[i].imag() - meta.norm_mean[1]) / meta.norm_scale[1];
    }
    out.positions = Tensor({6}, {slot.r_uav.x, slot.r_uav.y, slot.r_uav.z, slot.r_ue.x,
                                 slot.r_ue.y, slot.r_ue.z});
    out.target = Tensor::zeros({2 * n * q});
    for (std::size_t i = 0; i < n * q; ++i) {
        out.target[i] = slot.h_true.a[i].real();
        out.target[n * q + i] = slot.h_true.a[i].imag();
    }
    return out;
}

inline json to_json(const DatasetMeta& m) {
    return json{{"format_version", m.version},
                {"system", to_json(m.system)},
                {"signal_power", m.signal_power},
                {"norm_mean", m.norm_mean},
                {"norm_scale", m.norm_scale},
                {"val_episodes", m.val_episodes},
                {"seed", m.seed}};
}

inline DatasetMeta dataset_meta_from_json(const json& j) {
    detail::check_keys(j,
                       {"format_version", "system", "signal_power", "norm_mean",
                        "norm_scale", "val_episodes", "seed"},
                       "dataset meta");
    DatasetMeta m;
    detail::fetch(j, "format_version", m.version, "dataset meta");
    NFCE_REQUIRE(m.version == 1, "unsupported dataset meta version");
    m.system = system_config_from_json(j.at("system"), "dataset meta.system");
    detail::fetch(j, "signal_power", m.signal_power, "dataset meta");
    detail::fetch(j, "norm_mean", m.norm_mean, "dataset meta");
    detail::fetch(j, "norm_scale", m.norm_scale, "dataset meta");
    detail::fetch(j, "val_episodes", m.val_episodes, "dataset meta");
    detail::fetch(j, "seed", m.seed, "dataset meta");
    return m;
}

inline std::string meta_sidecar_path(const std::string& dataset_path) {
    return dataset_path + ".meta.json";
}

// Layout: magic "NFCE", u32 version, u32 episode/slot/N/Q counts, then per
// slot: Y real plane, Y imag plane, H real plane, H imag plane (row-major
// f64), 6 position f64, regime u8. Metadata travels in a JSON sidecar.
inline void write_dataset(const Dataset& ds, const std::string& path) {
    NFCE_REQUIRE(!ds.episodes.empty(), "write_dataset: no episodes");
    const std::size_t slots = ds.episodes[0].slots.size();
    NFCE_REQUIRE(slots > 0, "write_dataset: empty episode");
    const std::size_t n = ds.episodes[0].slots[0].y.rows;
    const std::size_t q = ds.episodes[0].slots[0].y.cols;

    BinWriter w(path);
    w.bytes("NFCE", 4);
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(ds.episodes.size()));
    w.u32(static_cast<std::uint32_t>(slots));
    w.u32(static_cast<std::uint32_t>(n));
    w.u32(static_cast<std::uint32_t>(q));
    for (const Episode& ep : ds.episodes) {
        NFCE_REQUIRE(ep.slots.size() == slots, "write_dataset: ragged episode lengths");
        for (const SlotRecord& slot : ep.slots) {
            NFCE_REQUIRE(slot.y.rows == n && slot.y.cols == q &&
                             slot.h_true.rows == n && slot.h_true.cols == q,
                         "write_dataset: inconsistent slot shapes");
            for (const cplx& v : slot.y.a) w.f64(v.real());
            for (const cplx& v : slot.y.a) w.f64(v.imag());
            for (const cplx& v : slot.h_true.a) w.f64(v.real());
            for (const cplx& v : slot.h_true.a) w.f64(v.imag());
            for (double v : {slot.r_uav.x, slot.r_uav.y, slot.r_uav.z, slot.r_ue.x,
                             slot.r_ue.y, slot.r_ue.z})
                w.f64(v);
            w.u8(static_cast<std::uint8_t>(slot.regime));
        }
    }
    w.close();
    write_text_file(meta_sidecar_path(path), canonical_dump(to_json(ds.meta)));
}

inline Dataset read_dataset(const std::string& path) {
    DatasetMeta meta;
    try {
        meta = dataset_meta_from_json(json::parse(read_text_file(meta_sidecar_path(path))));
    } catch (const json::exception& e) {
        throw IoError("cannot parse dataset meta sidecar for " + path + ": " + e.what());
    }

    BinReader r(path);
    r.expect_magic("NFCE", 4, "dataset " + path);
    const std::uint32_t version = r.u32();
    if (version != 1)
        throw IoError("dataset " + path + ": unsupported version " + std::to_string(version));
    const std::uint32_t episodes = r.u32();
    const std::uint32_t slots = r.u32();
    const std::uint32_t n = r.u32();
    const std::uint32_t q = r.u32();
    if (n != meta.system.n_antennas || q != meta.system.pilot_len)
        throw IoError("dataset " + path + ": header shape disagrees with meta sidecar");

    Dataset ds;
    ds.meta = meta;
    ds.episodes.resize(episodes);
    for (std::uint32_t e = 0; e < episodes; ++e) {
        Episode& ep = ds.episodes[e];
        ep.seed = derive_seed(meta.seed, e);
        ep.slots.resize(slots);
        for (std::uint32_t t = 0; t < slots; ++t) {
            SlotRecord& slot = ep.slots[t];
            slot.slot_index = t;
            slot.y = CMatrix(n, q);
            slot.h_true = CMatrix(n, q);
            std::vector<double> re(static_cast<std::size_t>(n) * q), im(re.size());
            for (double& v : re) v = r.f64();
            for (double& v : im) v = r.f64();
            for (std::size_t i = 0; i < re.size(); ++i) slot.y.a[i] = cplx(re[i], im[i]);
            for (double& v : re) v = r.f64();
            for (double& v : im) v = r.f64();
            for (std::size_t i = 0; i < re.size(); ++i) slot.h_true.a[i] = cplx(re[i], im[i]);
            slot.r_uav = {r.f64(), r.f64(), r.f64()};
            slot.r_ue = {r.f64(), r.f64(), r.f64()};
            const std::uint8_t tag = r.u8();
            if (tag > 1)
                throw IoError("dataset " + path + ": bad regime tag at byte " +
                              std::to_string(r.offset() - 1));
            slot.regime = static_cast<Regime>(tag);
        }
    }
    r.expect_eof("dataset " + path);
    return ds;
}

}  // namespace nfce
