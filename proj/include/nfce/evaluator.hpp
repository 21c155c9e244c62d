#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "nfce/baselines.hpp"
#include "nfce/serde.hpp"
#include "nfce/trainer.hpp"

namespace nfce {

// Per-slot normalized squared error; aggregation across slots is the plain
// mean of these ratios, so no slot dominates by raw channel power.
inline double nmse(const CMatrix& est, const CMatrix& truth) {
    NFCE_REQUIRE(est.rows == truth.rows && est.cols == truth.cols,
                 "nmse: shape mismatch");
    const double denom = truth.frob_sq();
    NFCE_REQUIRE(denom > 0.0, "nmse: all-zero target");
    double err = 0.0;
    for (std::size_t i = 0; i < est.a.size(); ++i) err += std::norm(est.a[i] - truth.a[i]);
    return err / denom;
}

inline double nmse_db(double linear) {
    NFCE_REQUIRE(linear >= 0.0, "nmse_db: negative input");
    return 10.0 * std::log10(linear);
}

struct NmseStat {
    double mean = 0.0;
    double ci_half_width = 0.0;  // 95% normal interval on the mean
    std::size_t count = 0;
};

inline NmseStat nmse_stat(const std::vector<double>& ratios) {
    NFCE_REQUIRE(!ratios.empty(), "nmse_stat: no samples");
    NmseStat s;
    s.count = ratios.size();
    for (double r : ratios) s.mean += r;
    s.mean /= static_cast<double>(s.count);
    if (s.count > 1) {
        double var = 0.0;
        for (double r : ratios) var += (r - s.mean) * (r - s.mean);
        var /= static_cast<double>(s.count - 1);
        s.ci_half_width = 1.96 * std::sqrt(var / static_cast<double>(s.count));
    }
    return s;
}

// Noise power the dataset's observations were generated with.
inline double dataset_sigma_sq(const Dataset& ds) {
    return snr_to_sigma_sq(ds.meta.system.snr_db, ds.meta.signal_power);
}

inline std::vector<WindowRef> all_windows(const Dataset& ds, std::size_t t_history) {
    std::vector<WindowRef> out = extract_windows(ds, t_history, false);
    const std::vector<WindowRef> val = extract_windows(ds, t_history, true);
    out.insert(out.end(), val.begin(), val.end());
    return out;
}

// Rebuilds the complex N x Q estimate from a stacked [Re row-major; Im
// row-major] output row.
inline CMatrix unstack_estimate(const double* row, std::size_t n, std::size_t q) {
    CMatrix h(n, q);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < q; ++j)
            h.at(i, j) = cplx(row[i * q + j], row[n * q + i * q + j]);
    return h;
}

namespace detail_eval {

inline const SlotRecord& window_slot(const Dataset& ds, const WindowRef& w) {
    return ds.episodes[w.episode].slots[w.last_slot];
}

}  // namespace detail_eval

// Analytic estimators run on the final slot of each window so every
// estimator is scored on the identical slot set.
inline std::vector<double> nmse_ratios_ls(const Dataset& ds,
                                          const std::vector<WindowRef>& windows) {
    NFCE_REQUIRE(!windows.empty(), "nmse_ratios_ls: no windows");
    const PilotBlock pilots =
        make_pilots(ds.meta.system.pilot_len, ds.meta.system.pilot_es());
    std::vector<double> out;
    out.reserve(windows.size());
    for (const WindowRef& w : windows) {
        const SlotRecord& slot = detail_eval::window_slot(ds, w);
        out.push_back(nmse(ls_estimate(ReceivedBlock{slot.y}, pilots), slot.h_true));
    }
    return out;
}

inline std::vector<double> nmse_ratios_lmmse(const Dataset& ds,
                                             const std::vector<WindowRef>& windows,
                                             const CovarianceEstimate& cov) {
    NFCE_REQUIRE(!windows.empty(), "nmse_ratios_lmmse: no windows");
    const PilotBlock pilots =
        make_pilots(ds.meta.system.pilot_len, ds.meta.system.pilot_es());
    const double sigma_sq = dataset_sigma_sq(ds);
    std::vector<double> out;
    out.reserve(windows.size());
    for (const WindowRef& w : windows) {
        const SlotRecord& slot = detail_eval::window_slot(ds, w);
        out.push_back(
            nmse(lmmse_estimate(ReceivedBlock{slot.y}, pilots, cov, sigma_sq),
                 slot.h_true));
    }
    return out;
}

// Runs the trained network over eval windows in batches; inputs are
// normalized with the statistics stored in the checkpoint, not the eval
// dataset's own, so the model sees the scaling it was trained under.
inline std::vector<CMatrix> model_estimates(const Dataset& ds,
                                            const std::vector<WindowRef>& windows,
                                            const Checkpoint& ckpt,
                                            std::size_t batch = 64) {
    NFCE_REQUIRE(!windows.empty(), "model_estimates: no windows");
    NFCE_REQUIRE(batch >= 1, "model_estimates: batch must be >= 1");
    const std::size_t n = ckpt.n_antennas, q = ckpt.pilot_len;

    DatasetMeta norm_meta = ds.meta;
    if (ckpt.params.has("input.norm_mean") && ckpt.params.has("input.norm_scale")) {
        const Tensor& mean = ckpt.params.get("input.norm_mean");
        const Tensor& scale = ckpt.params.get("input.norm_scale");
        NFCE_REQUIRE(mean.size() == 2 && scale.size() == 2,
                     "model_estimates: malformed input statistics");
        norm_meta.norm_mean = {mean[0], mean[1]};
        norm_meta.norm_scale = {scale[0], scale[1]};
    }
    const SlotCache cache(ds, norm_meta);
    NFCE_REQUIRE(cache.n_antennas() == n && cache.pilot_len() == q,
                 "model_estimates: checkpoint and dataset dimensions disagree");

    const EstimatorNet net(ckpt.model, n, q, ckpt.ablation);
    ParamStore ps = ckpt.params;
    std::vector<CMatrix> out;
    out.reserve(windows.size());
    for (std::size_t begin = 0; begin < windows.size(); begin += batch) {
        const std::size_t count = std::min(batch, windows.size() - begin);
        const BatchTensors bt = cache.gather(windows, begin, count, ckpt.model.t_history);
        Tape t;
        Binder bind(t, ps);
        Var pred = net.forward(t, bind, t.leaf(bt.images), t.leaf(bt.positions),
                               /*train=*/false);
        const Tensor& val = t.val(pred);
        for (std::size_t b = 0; b < count; ++b)
            out.push_back(unstack_estimate(val.data() + b * 2 * n * q, n, q));
    }
    return out;
}

inline std::vector<double> nmse_ratios_model(const Dataset& ds,
                                             const std::vector<WindowRef>& windows,
                                             const Checkpoint& ckpt,
                                             std::size_t batch = 64) {
    const std::vector<CMatrix> est = model_estimates(ds, windows, ckpt, batch);
    std::vector<double> out;
    out.reserve(windows.size());
    for (std::size_t w = 0; w < windows.size(); ++w)
        out.push_back(nmse(est[w], detail_eval::window_slot(ds, windows[w]).h_true));
    return out;
}

// ---------------------------------------------------------------------------
// Bit error rate: Gray-coded QPSK over the true channel's first column,
// detected by maximum-ratio combining with the estimated column.

struct BerInput {
    CVector h;      // true channel column
    CVector h_hat;  // estimator's column
};

inline double ber_point(const std::vector<BerInput>& slots, double sigma_sq,
                        std::size_t symbols, Rng& rng) {
    NFCE_REQUIRE(!slots.empty(), "ber_point: no slots");
    NFCE_REQUIRE(symbols >= 10000, "ber_point: need at least 10^4 symbols");
    NFCE_REQUIRE(sigma_sq >= 0.0, "ber_point: sigma^2 must be >= 0");
    const double sigma = std::sqrt(sigma_sq);
    const double amp = 1.0 / std::sqrt(2.0);

    const std::size_t per_slot = (symbols + slots.size() - 1) / slots.size();
    std::uint64_t errors = 0, bits = 0;
    for (const BerInput& s : slots) {
        NFCE_REQUIRE(!s.h.empty() && s.h.size() == s.h_hat.size(),
                     "ber_point: column size mismatch");
        for (std::size_t k = 0; k < per_slot; ++k) {
            const bool b0 = rng.below(2) != 0;
            const bool b1 = rng.below(2) != 0;
            const cplx x(amp * (b0 ? -1.0 : 1.0), amp * (b1 ? -1.0 : 1.0));
            cplx combined = 0.0;
            for (std::size_t a = 0; a < s.h.size(); ++a) {
                const cplx y = s.h[a] * x + sigma * rng.cnormal();
                combined += std::conj(s.h_hat[a]) * y;
            }
            errors += static_cast<std::uint64_t>((combined.real() < 0.0) != b0);
            errors += static_cast<std::uint64_t>((combined.imag() < 0.0) != b1);
            bits += 2;
        }
    }
    return static_cast<double>(errors) / static_cast<double>(bits);
}

inline CVector first_column(const CMatrix& h) {
    CVector c(h.rows);
    for (std::size_t n = 0; n < h.rows; ++n) c[n] = h.at(n, 0);
    return c;
}

// ---------------------------------------------------------------------------
// Sweeps

struct ResultRow {
    std::string axis;
    double value = 0.0;
    std::string estimator;
    double nmse = 0.0;
    double nmse_db = 0.0;
    double ber = 0.0;
    bool has_ber = false;
    double ci_half_width = 0.0;
};

struct ResultTable {
    std::vector<ResultRow> rows;
    json metadata;
};

inline bool is_model_estimator(const std::string& name) {
    return name != "ls" && name != "lmmse";
}

// Applies one sweep-axis value to a copy of the base configuration. Count
// axes require exact integers.
inline RunConfig apply_axis(RunConfig cfg, SweepAxis axis, double value) {
    auto as_count = [&](const char* what) {
        NFCE_REQUIRE(value >= 1.0 && value == std::floor(value),
                     std::string("sweep: ") + what + " values must be positive integers");
        return static_cast<std::size_t>(value);
    };
    switch (axis) {
        case SweepAxis::SnrDb: cfg.system.snr_db = value; break;
        case SweepAxis::PilotLen: cfg.system.pilot_len = as_count("pilot_len"); break;
        case SweepAxis::Antennas: cfg.system.n_antennas = as_count("antennas"); break;
        case SweepAxis::Speed:
            NFCE_REQUIRE(value >= 0.0, "sweep: speed must be >= 0");
            cfg.system.v_ue_mps = value;
            break;
        case SweepAxis::History: cfg.model.t_history = as_count("t_history"); break;
        case SweepAxis::Paths: cfg.system.n_paths = as_count("paths"); break;
    }
    return cfg;
}

namespace detail_sweep {

inline constexpr std::uint64_t kTrainDataLane = 1ULL << 50;
inline constexpr std::uint64_t kEvalDataLane = 1ULL << 51;
inline constexpr std::uint64_t kBerLane = 1ULL << 52;

struct TrainedSet {
    std::map<std::string, Checkpoint> models;  // keyed by estimator name
    CovarianceEstimate cov;
    bool has_cov = false;
};

// Trains whatever the estimator list needs on one configuration's data.
inline TrainedSet prepare(const RunConfig& cfg, const SweepSpec& spec,
                          std::uint64_t train_seed) {
    TrainedSet out;
    const bool needs_lmmse =
        std::find(spec.estimators.begin(), spec.estimators.end(), "lmmse") !=
        spec.estimators.end();
    bool needs_models = false;
    for (const std::string& e : spec.estimators)
        if (is_model_estimator(e)) needs_models = true;
    if (!needs_lmmse && !needs_models) return out;

    SystemConfig train_sys = cfg.system;
    if (spec.train_episodes > 0) train_sys.episodes = spec.train_episodes;
    const Dataset train_ds = build_dataset(train_sys, train_seed);

    if (needs_lmmse) {
        out.cov = train_covariance(train_ds);
        out.has_cov = true;
    }
    for (const std::string& name : spec.estimators) {
        if (!is_model_estimator(name)) continue;
        TrainConfig tc = cfg.train;
        tc.ablation = ablation_from_name(name);
        if (spec.epochs > 0) tc.epochs = spec.epochs;
        out.models.emplace(name, train_model(train_ds, cfg.model, tc).checkpoint);
    }
    return out;
}

}  // namespace detail_sweep

// Runs the configured sweep: models are retrained per value on axes that
// change the observation or architecture shape and reused otherwise. All
// axis values are validated before any data generation or training starts.
inline ResultTable run_sweep(const RunConfig& base) {
    const SweepSpec& spec = base.sweep;
    spec.validate();
    for (const std::string& name : spec.estimators)
        if (is_model_estimator(name)) (void)ablation_from_name(name);

    std::vector<RunConfig> configs;
    configs.reserve(spec.values.size());
    for (double v : spec.values) {
        RunConfig cfg = apply_axis(base, spec.axis, v);
        cfg.validate();
        configs.push_back(cfg);
    }

    const bool retrain = sweep_axis_retrains(spec.axis);
    const std::string axis = sweep_axis_name(spec.axis);

    ResultTable table;
    detail_sweep::TrainedSet shared;
    if (!retrain)  // reused models are trained at the base operating point
        shared = detail_sweep::prepare(base, spec,
                                       derive_seed(spec.seed,
                                                   detail_sweep::kTrainDataLane));

    for (std::size_t i = 0; i < spec.values.size(); ++i) {
        const RunConfig& cfg = configs[i];
        const detail_sweep::TrainedSet local =
            retrain ? detail_sweep::prepare(cfg, spec,
                                            derive_seed(spec.seed,
                                                        detail_sweep::kTrainDataLane + i))
                    : detail_sweep::TrainedSet{};
        const detail_sweep::TrainedSet& trained = retrain ? local : shared;

        SystemConfig eval_sys = cfg.system;
        eval_sys.episodes = spec.eval_episodes;
        const Dataset eval_ds =
            build_dataset(eval_sys, derive_seed(spec.seed, detail_sweep::kEvalDataLane));
        const std::vector<WindowRef> windows = all_windows(eval_ds, cfg.model.t_history);
        const double sigma_sq = dataset_sigma_sq(eval_ds);
        const PilotBlock pilots =
            make_pilots(eval_sys.pilot_len, eval_sys.pilot_es());

        auto estimates_for = [&](const std::string& name) {
            std::vector<CMatrix> est;
            est.reserve(windows.size());
            if (name == "ls" || name == "lmmse") {
                for (const WindowRef& w : windows) {
                    const SlotRecord& slot = detail_eval::window_slot(eval_ds, w);
                    est.push_back(name == "ls"
                                      ? ls_estimate(ReceivedBlock{slot.y}, pilots)
                                      : lmmse_estimate(ReceivedBlock{slot.y}, pilots,
                                                       trained.cov, sigma_sq));
                }
            } else {
                est = model_estimates(eval_ds, windows, trained.models.at(name));
            }
            return est;
        };

        auto ber_for = [&](const std::vector<CMatrix>* est) {
            std::vector<BerInput> slots;
            slots.reserve(windows.size());
            for (std::size_t w = 0; w < windows.size(); ++w) {
                const CMatrix& truth =
                    detail_eval::window_slot(eval_ds, windows[w]).h_true;
                slots.push_back(
                    {first_column(truth),
                     est ? first_column((*est)[w]) : first_column(truth)});
            }
            Rng rng(derive_seed(spec.seed, detail_sweep::kBerLane));
            return ber_point(slots, sigma_sq, 10000, rng);
        };

        for (const std::string& name : spec.estimators) {
            const std::vector<CMatrix> est = estimates_for(name);
            std::vector<double> ratios;
            ratios.reserve(windows.size());
            for (std::size_t w = 0; w < windows.size(); ++w)
                ratios.push_back(
                    nmse(est[w], detail_eval::window_slot(eval_ds, windows[w]).h_true));
            const NmseStat stat = nmse_stat(ratios);
            ResultRow row{axis,     spec.values[i], name, stat.mean,
                          nmse_db(stat.mean), 0.0,  false, stat.ci_half_width};
            if (spec.with_ber) {
                row.ber = ber_for(&est);
                row.has_ber = true;
            }
            table.rows.push_back(row);
        }
        if (spec.with_ber) {
            ResultRow perfect{axis, spec.values[i], "perfect_csi", 0.0,
                              nmse_db(0.0), ber_for(nullptr), true, 0.0};
            table.rows.push_back(perfect);
        }
    }

    table.metadata = json{{"axis", axis},
                          {"values", spec.values},
                          {"estimators", spec.estimators},
                          {"seed", spec.seed},
                          {"eval_episodes", spec.eval_episodes},
                          {"train_episodes", spec.train_episodes},
                          {"epochs", spec.epochs},
                          {"with_ber", spec.with_ber},
                          {"retrain_per_value", retrain},
                          {"config_hash", config_hash(base)}};
    return table;
}

inline void write_result_csv(const ResultTable& table, const std::string& path) {
    std::string text = "axis,value,estimator,nmse,nmse_db,ber,ci_half_width\n";
    for (const ResultRow& r : table.rows) {
        text += r.axis + "," + fmt_double(r.value) + "," + r.estimator + "," +
                fmt_double(r.nmse) + "," + fmt_double(r.nmse_db) + "," +
                (r.has_ber ? fmt_double(r.ber) : std::string()) + "," +
                fmt_double(r.ci_half_width) + "\n";
    }
    write_text_file(path, text);
    write_text_file(path + ".meta.json", canonical_dump(table.metadata));
}

}  // namespace nfce
