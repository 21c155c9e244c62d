#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nfce/errors.hpp"

namespace nfce {

inline constexpr double kSpeedOfLight = 299792458.0;  // m/s

// Physical constants, signal dimensions, and dataset generation knobs.
// Defaults reproduce the reference system: N=16 half-wavelength ULA at
// 3.5 GHz, Q=8 pilot slot-uses, L=3 paths, 5 m/s node speeds.
struct SystemConfig {
    std::size_t n_antennas = 16;
    double carrier_hz = 3.5e9;
    double wavelength_m = 0.0857;
    double spacing_m = 0.0;  // 0 -> wavelength / 2
    std::size_t pilot_len = 8;
    double pilot_energy = 0.0;  // E_s; 0 -> pilot_len (unit per-symbol power)
    std::size_t n_paths = 3;
    double ar_rho = 0.99;
    double delta_t_s = 1e-3;
    double v_uav_mps = 5.0;
    double v_ue_mps = 5.0;
    double snr_db = 10.0;

    std::size_t episodes = 5000;
    std::size_t slots_per_episode = 12;
    double ue_dist_min_m = 2.0;
    double ue_dist_max_m = 30.0;
    double uav_alt_min_m = 10.0;
    double uav_alt_max_m = 30.0;
    double scatter_radius_m = 15.0;
    std::size_t calib_episodes = 200;
    double val_fraction = 0.2;

    double spacing() const { return spacing_m > 0.0 ? spacing_m : wavelength_m / 2.0; }
    double pilot_es() const {
        return pilot_energy > 0.0 ? pilot_energy : static_cast<double>(pilot_len);
    }

    void validate() const {
        NFCE_REQUIRE(n_antennas >= 2, "system.n_antennas must be >= 2");
        NFCE_REQUIRE(carrier_hz > 0.0, "system.carrier_hz must be > 0");
        NFCE_REQUIRE(wavelength_m > 0.0, "system.wavelength_m must be > 0");
        NFCE_REQUIRE(spacing_m >= 0.0, "system.spacing_m must be >= 0");
        NFCE_REQUIRE(pilot_len >= 1, "system.pilot_len must be >= 1");
        NFCE_REQUIRE(pilot_energy >= 0.0, "system.pilot_energy must be >= 0");
        NFCE_REQUIRE(n_paths >= 1, "system.n_paths must be >= 1");
        NFCE_REQUIRE(ar_rho >= 0.0 && ar_rho <= 1.0, "system.ar_rho must be in [0,1]");
        NFCE_REQUIRE(delta_t_s > 0.0, "system.delta_t_s must be > 0");
        NFCE_REQUIRE(v_uav_mps >= 0.0 && v_ue_mps >= 0.0, "system speeds must be >= 0");
        NFCE_REQUIRE(episodes >= 1, "system.episodes must be >= 1");
        NFCE_REQUIRE(slots_per_episode >= 1, "system.slots_per_episode must be >= 1");
        NFCE_REQUIRE(ue_dist_min_m > 0.0 && ue_dist_max_m >= ue_dist_min_m,
                     "system.ue_dist range invalid");
        NFCE_REQUIRE(uav_alt_min_m > 0.0 && uav_alt_max_m >= uav_alt_min_m,
                     "system.uav_alt range invalid");
        NFCE_REQUIRE(scatter_radius_m > 0.0, "system.scatter_radius_m must be > 0");
        NFCE_REQUIRE(calib_episodes >= 1, "system.calib_episodes must be >= 1");
        NFCE_REQUIRE(val_fraction > 0.0 && val_fraction < 1.0,
                     "system.val_fraction must be in (0,1)");
    }
};

enum class Ablation { Full, CnnOnly, Racnn, CnnLstm, NoPosition };

inline std::string ablation_name(Ablation a) {
    switch (a) {
        case Ablation::Full: return "full";
        case Ablation::CnnOnly: return "cnn";
        case Ablation::Racnn: return "racnn";
        case Ablation::CnnLstm: return "cnn_lstm";
        case Ablation::NoPosition: return "no_position";
    }
    return "?";
}

inline Ablation ablation_from_name(const std::string& s) {
    if (s == "full") return Ablation::Full;
    if (s == "cnn") return Ablation::CnnOnly;
    if (s == "racnn") return Ablation::Racnn;
    if (s == "cnn_lstm") return Ablation::CnnLstm;
    if (s == "no_position") return Ablation::NoPosition;
    throw ValidationError("unknown ablation: " + s);
}

struct ModelConfig {
    std::size_t l_conv = 3;
    std::size_t c1 = 64;
    std::size_t kernel = 3;
    std::size_t n_heads = 4;
    std::size_t d_h = 128;
    std::size_t pos_width = 32;
    std::size_t dense_hidden = 256;
    std::size_t t_history = 6;
    bool position_per_slot = false;
    double bn_momentum = 0.9;
    double bn_eps = 1e-5;
    double ln_eps = 1e-5;

    void validate() const {
        NFCE_REQUIRE(l_conv >= 1, "model.l_conv must be >= 1");
        NFCE_REQUIRE(c1 >= 1, "model.c1 must be >= 1");
        NFCE_REQUIRE(kernel >= 1 && kernel % 2 == 1, "model.kernel must be odd");
        NFCE_REQUIRE(n_heads >= 1, "model.n_heads must be >= 1");
        NFCE_REQUIRE(d_h >= 1, "model.d_h must be >= 1");
        NFCE_REQUIRE(dense_hidden >= 1, "model.dense_hidden must be >= 1");
        NFCE_REQUIRE(t_history >= 1, "model.t_history must be >= 1");
        NFCE_REQUIRE(bn_momentum >= 0.0 && bn_momentum < 1.0,
                     "model.bn_momentum must be in [0,1)");
        NFCE_REQUIRE(bn_eps > 0.0 && ln_eps > 0.0, "model eps values must be > 0");
    }
};

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch = 32;
    double lr = 1e-3;
    bool cosine_lr = false;  // anneal lr to lr/100 over the epoch budget
    std::uint64_t seed = 1;
    std::size_t checkpoint_every = 0;  // 0 -> keep best only
    Ablation ablation = Ablation::Full;

    void validate() const {
        NFCE_REQUIRE(epochs >= 1, "train.epochs must be >= 1");
        NFCE_REQUIRE(batch >= 2, "train.batch must be >= 2 (batch statistics)");
        NFCE_REQUIRE(lr > 0.0, "train.lr must be > 0");
    }
};

enum class SweepAxis { SnrDb, PilotLen, Antennas, Speed, History, Paths };

inline std::string sweep_axis_name(SweepAxis a) {
    switch (a) {
        case SweepAxis::SnrDb: return "snr_db";
        case SweepAxis::PilotLen: return "pilot_len";
        case SweepAxis::Antennas: return "antennas";
        case SweepAxis::Speed: return "speed";
        case SweepAxis::History: return "t_history";
        case SweepAxis::Paths: return "paths";
    }
    return "?";
}

inline SweepAxis sweep_axis_from_name(const std::string& s) {
    if (s == "snr_db") return SweepAxis::SnrDb;
    if (s == "pilot_len") return SweepAxis::PilotLen;
    if (s == "antennas") return SweepAxis::Antennas;
    if (s == "speed") return SweepAxis::Speed;
    if (s == "t_history") return SweepAxis::History;
    if (s == "paths") return SweepAxis::Paths;
    throw ValidationError("unknown sweep axis: " + s);
}

// Models are retrained per value on axes that change the observation or
// architecture shape (antennas, pilot_len, paths, t_history) and reused
// across snr_db and speed values.
inline bool sweep_axis_retrains(SweepAxis a) {
    return a == SweepAxis::PilotLen || a == SweepAxis::Antennas ||
           a == SweepAxis::History || a == SweepAxis::Paths;
}

struct SweepSpec {
    SweepAxis axis = SweepAxis::SnrDb;
    std::vector<double> values;
    std::vector<std::string> estimators;  // ls, lmmse, full, cnn, racnn, cnn_lstm, no_position
    std::size_t eval_episodes = 200;
    std::size_t train_episodes = 0;  // 0 -> system.episodes
    std::size_t epochs = 0;          // 0 -> train.epochs
    bool with_ber = false;
    std::uint64_t seed = 1;

    void validate() const {
        NFCE_REQUIRE(!values.empty(), "sweep.values must be non-empty");
        for (std::size_t i = 1; i < values.size(); ++i)
            NFCE_REQUIRE(values[i - 1] < values[i],
                         "sweep.values must be strictly ascending");
        NFCE_REQUIRE(!estimators.empty(), "sweep.estimators must be non-empty");
        NFCE_REQUIRE(eval_episodes >= 1, "sweep.eval_episodes must be >= 1");
    }
};

struct RunConfig {
    SystemConfig system;
    ModelConfig model;
    TrainConfig train;
    SweepSpec sweep;

    void validate() const {
        system.validate();
        model.validate();
        train.validate();
        NFCE_REQUIRE(model.t_history <= system.slots_per_episode,
                     "model.t_history must be <= system.slots_per_episode");
        // token width C1*N must split evenly across attention heads
        NFCE_REQUIRE((model.c1 * system.n_antennas) % model.n_heads == 0,
                     "model.n_heads must divide c1 * n_antennas");
    }
};

}  // namespace nfce
