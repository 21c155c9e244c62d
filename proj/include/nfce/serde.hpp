#pragma once

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "nfce/config.hpp"
#include "nfce/errors.hpp"

namespace nfce {

using json = nlohmann::json;

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
    NFCE_REQUIRE(j.is_object(), where + " must be a JSON object");
    for (const auto& [key, _] : j.items())
        NFCE_REQUIRE(allowed.count(key), "unknown key '" + key + "' in " + where);
}

template <typename T>
void fetch(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ValidationError("bad value for '" + std::string(key) + "' in " + where + ": " +
                              e.what());
    }
}

}  // namespace detail

inline json to_json(const SystemConfig& c) {
    return json{{"n_antennas", c.n_antennas},
                {"carrier_hz", c.carrier_hz},
                {"wavelength_m", c.wavelength_m},
                {"spacing_m", c.spacing_m},
                {"pilot_len", c.pilot_len},
                {"pilot_energy", c.pilot_energy},
                {"n_paths", c.n_paths},
                {"ar_rho", c.ar_rho},
                {"delta_t_s", c.delta_t_s},
                {"v_uav_mps", c.v_uav_mps},
                {"v_ue_mps", c.v_ue_mps},
                {"snr_db", c.snr_db},
                {"episodes", c.episodes},
                {"slots_per_episode", c.slots_per_episode},
                {"ue_dist_min_m", c.ue_dist_min_m},
                {"ue_dist_max_m", c.ue_dist_max_m},
                {"uav_alt_min_m", c.uav_alt_min_m},
                {"uav_alt_max_m", c.uav_alt_max_m},
                {"scatter_radius_m", c.scatter_radius_m},
                {"calib_episodes", c.calib_episodes},
                {"val_fraction", c.val_fraction}};
}

inline SystemConfig system_config_from_json(const json& j, const std::string& where) {
    detail::check_keys(j,
                       {"n_antennas", "carrier_hz", "wavelength_m", "spacing_m", "pilot_len",
                        "pilot_energy", "n_paths", "ar_rho", "delta_t_s", "v_uav_mps",
                        "v_ue_mps", "snr_db", "episodes", "slots_per_episode",
                        "ue_dist_min_m", "ue_dist_max_m", "uav_alt_min_m", "uav_alt_max_m",
                        "scatter_radius_m", "calib_episodes", "val_fraction"},
                       where);
    SystemConfig c;
    detail::fetch(j, "n_antennas", c.n_antennas, where);
    detail::fetch(j, "carrier_hz", c.carrier_hz, where);
    detail::fetch(j, "wavelength_m", c.wavelength_m, where);
    detail::fetch(j, "spacing_m", c.spacing_m, where);
    detail::fetch(j, "pilot_len", c.pilot_len, where);
    detail::fetch(j, "pilot_energy", c.pilot_energy, where);
    detail::fetch(j, "n_paths", c.n_paths, where);
    detail::fetch(j, "ar_rho", c.ar_rho, where);
    detail::fetch(j, "delta_t_s", c.delta_t_s, where);
    detail::fetch(j, "v_uav_mps", c.v_uav_mps, where);
    detail::fetch(j, "v_ue_mps", c.v_ue_mps, where);
    detail::fetch(j, "snr_db", c.snr_db, where);
    detail::fetch(j, "episodes", c.episodes, where);
    detail::fetch(j, "slots_per_episode", c.slots_per_episode, where);
    detail::fetch(j, "ue_dist_min_m", c.ue_dist_min_m, where);
    detail::fetch(j, "ue_dist_max_m", c.ue_dist_max_m, where);
    detail::fetch(j, "uav_alt_min_m", c.uav_alt_min_m, where);
    detail::fetch(j, "uav_alt_max_m", c.uav_alt_max_m, where);
    detail::fetch(j, "scatter_radius_m", c.scatter_radius_m, where);
    detail::fetch(j, "calib_episodes", c.calib_episodes, where);
    detail::fetch(j, "val_fraction", c.val_fraction, where);
    return c;
}

inline json to_json(const ModelConfig& c) {
    return json{{"l_conv", c.l_conv},
                {"c1", c.c1},
                {"kernel", c.kernel},
                {"n_heads", c.n_heads},
                {"d_h", c.d_h},
                {"pos_width", c.pos_width},
                {"dense_hidden", c.dense_hidden},
                {"t_history", c.t_history},
                {"position_per_slot", c.position_per_slot},
                {"bn_momentum", c.bn_momentum},
                {"bn_eps", c.bn_eps},
                {"ln_eps", c.ln_eps}};
}

inline ModelConfig model_config_from_json(const json& j, const std::string& where) {
    detail::check_keys(j,
                       {"l_conv", "c1", "kernel", "n_heads", "d_h", "pos_width",
                        "dense_hidden", "t_history", "position_per_slot", "bn_momentum",
                        "bn_eps", "ln_eps"},
                       where);
    ModelConfig c;
    detail::fetch(j, "l_conv", c.l_conv, where);
    detail::fetch(j, "c1", c.c1, where);
    detail::fetch(j, "kernel", c.kernel, where);
    detail::fetch(j, "n_heads", c.n_heads, where);
    detail::fetch(j, "d_h", c.d_h, where);
    detail::fetch(j, "pos_width", c.pos_width, where);
    detail::fetch(j, "dense_hidden", c.dense_hidden, where);
    detail::fetch(j, "t_history", c.t_history, where);
    detail::fetch(j, "position_per_slot", c.position_per_slot, where);
    detail::fetch(j, "bn_momentum", c.bn_momentum, where);
    detail::fetch(j, "bn_eps", c.bn_eps, where);
    detail::fetch(j, "ln_eps", c.ln_eps, where);
    return c;
}

inline json to_json(const TrainConfig& c) {
    return json{{"epochs", c.epochs},         {"batch", c.batch},
                {"lr", c.lr},                 {"cosine_lr", c.cosine_lr},
                {"seed", c.seed},
                {"checkpoint_every", c.checkpoint_every},
                {"ablation", ablation_name(c.ablation)}};
}

inline TrainConfig train_config_from_json(const json& j, const std::string& where) {
    detail::check_keys(j, {"epochs", "batch", "lr", "cosine_lr", "seed",
                           "checkpoint_every", "ablation"},
                       where);
    TrainConfig c;
    detail::fetch(j, "epochs", c.epochs, where);
    detail::fetch(j, "batch", c.batch, where);
    detail::fetch(j, "lr", c.lr, where);
    detail::fetch(j, "cosine_lr", c.cosine_lr, where);
    detail::fetch(j, "seed", c.seed, where);
    detail::fetch(j, "checkpoint_every", c.checkpoint_every, where);
    if (j.contains("ablation")) c.ablation = ablation_from_name(j.at("ablation").get<std::string>());
    return c;
}

inline json to_json(const SweepSpec& c) {
    return json{{"axis", sweep_axis_name(c.axis)},
                {"values", c.values},
                {"estimators", c.estimators},
                {"eval_episodes", c.eval_episodes},
                {"train_episodes", c.train_episodes},
                {"epochs", c.epochs},
                {"with_ber", c.with_ber},
                {"seed", c.seed}};
}

inline SweepSpec sweep_spec_from_json(const json& j, const std::string& where) {
    detail::check_keys(j,
                       {"axis", "values", "estimators", "eval_episodes", "train_episodes",
                        "epochs", "with_ber", "seed"},
                       where);
    SweepSpec c;
    if (j.contains("axis")) c.axis = sweep_axis_from_name(j.at("axis").get<std::string>());
    detail::fetch(j, "values", c.values, where);
    detail::fetch(j, "estimators", c.estimators, where);
    detail::fetch(j, "eval_episodes", c.eval_episodes, where);
    detail::fetch(j, "train_episodes", c.train_episodes, where);
    detail::fetch(j, "epochs", c.epochs, where);
    detail::fetch(j, "with_ber", c.with_ber, where);
    detail::fetch(j, "seed", c.seed, where);
    return c;
}

inline json to_json(const RunConfig& c) {
    return json{{"version", 1},
                {"system", to_json(c.system)},
                {"model", to_json(c.model)},
                {"train", to_json(c.train)},
                {"sweep", to_json(c.sweep)}};
}

inline RunConfig run_config_from_json(const json& j) {
    detail::check_keys(j, {"version", "system", "model", "train", "sweep"}, "config");
    if (j.contains("version"))
        NFCE_REQUIRE(j.at("version").get<int>() == 1, "config version must be 1");
    RunConfig c;
    if (j.contains("system")) c.system = system_config_from_json(j.at("system"), "config.system");
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"), "config.model");
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"), "config.train");
    if (j.contains("sweep")) c.sweep = sweep_spec_from_json(j.at("sweep"), "config.sweep");
    c.validate();
    return c;
}

inline RunConfig run_config_from_text(const std::string& body, const std::string& where) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw ValidationError("cannot parse " + where + ": " + e.what());
    }
    return run_config_from_json(j);
}

// Stable textual form used for config hashing and file output.
inline std::string canonical_dump(const json& j) { return j.dump(2) + "\n"; }

inline std::uint64_t fnv1a_hash(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t config_hash(const RunConfig& c) {
    return fnv1a_hash(canonical_dump(to_json(c)));
}

}  // namespace nfce
