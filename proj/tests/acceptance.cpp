// Acceptance gate: one PASS/FAIL line per criterion, tolerances pinned
// below. Criteria share one desk-scale workbench so each model is trained
// exactly once; a failed prerequisite fails the criteria that need it
// rather than aborting the run. Exit code 0 iff every criterion passes.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>
#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "nfce/evaluator.hpp"
#include "nfce/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace nfce;

namespace {

// ---------------------------------------------------------------------------
// Pinned desk-scale configuration: 5000 mixed-regime episodes, N=16, Q=8,
// 50 epochs. Six slots against a four-slot history give three stride-one
// windows per episode; model widths are sized so the 50-epoch run fits a
// single CPU core with margin.

SystemConfig desk_system() {
    SystemConfig s;
    s.n_antennas = 16;
    s.pilot_len = 8;
    s.n_paths = 3;
    s.snr_db = 10.0;
    s.episodes = 5000;
    s.slots_per_episode = 6;
    s.calib_episodes = 200;
    s.val_fraction = 0.2;
    return s;
}

ModelConfig desk_model() {
    ModelConfig m;
    m.l_conv = 2;
    m.c1 = 3;
    m.kernel = 3;
    m.n_heads = 2;
    m.d_h = 16;
    m.pos_width = 8;
    m.dense_hidden = 64;
    m.t_history = 4;
    return m;
}

TrainConfig desk_train() {
    TrainConfig t;
    t.epochs = 50;
    t.batch = 64;
    t.lr = 1e-3;
    t.cosine_lr = true;
    t.seed = 7;
    return t;
}

constexpr std::uint64_t kBaseDataSeed = 9001;  // base training dataset
constexpr std::uint64_t kEvalSeed = 4242;      // shared by every eval dataset (pairing)
constexpr std::uint64_t kBerSeed = 777;        // re-seeded per estimator (pairing)
constexpr std::size_t kEvalEpisodes = 400;
constexpr std::size_t kPathEvalEpisodes = 1200;  // path-count gap needs tighter CIs
const std::vector<double> kSnrGrid = {0.0, 5.0, 10.0, 15.0, 20.0};

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    }
};

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

// ---------------------------------------------------------------------------
// Shared workbench. Trained models and eval datasets are built by the first
// criterion that needs them and reused afterwards.

struct Bench {
    Dataset base_ds;
    bool has_base_ds = false;

    TrainResult full, cnn;  // the pinned 50-epoch runs, shared by all criteria
    bool has_full = false, has_cnn = false;
    double full_secs = 0.0;  // training wall clock, charged against later budgets

    CovarianceEstimate cov;
    bool has_cov = false;

    std::map<double, Dataset> eval_by_snr;  // desk geometry, varying SNR

    const Dataset& base() {
        if (!has_base_ds) {
            base_ds = build_dataset(desk_system(), kBaseDataSeed);
            has_base_ds = true;
        }
        return base_ds;
    }

    const TrainResult& full_model() {
        NFCE_REQUIRE(has_full, "prerequisite full-model training unavailable");
        return full;
    }
    const TrainResult& cnn_model() {
        NFCE_REQUIRE(has_cnn, "prerequisite ablation training unavailable");
        return cnn;
    }
    const CovarianceEstimate& covariance() {
        if (!has_cov) {
            cov = train_covariance(base());
            has_cov = true;
        }
        return cov;
    }
    const Dataset& eval_at_snr(double snr) {
        auto it = eval_by_snr.find(snr);
        if (it != eval_by_snr.end()) return it->second;
        SystemConfig sys = desk_system();
        sys.snr_db = snr;
        sys.episodes = kEvalEpisodes;
        return eval_by_snr.emplace(snr, build_dataset(sys, kEvalSeed)).first->second;
    }
};

NmseStat model_stat(const Dataset& ds, const Checkpoint& ckpt) {
    const std::vector<WindowRef> windows = all_windows(ds, ckpt.model.t_history);
    return nmse_stat(nmse_ratios_model(ds, windows, ckpt));
}

// ---------------------------------------------------------------------------
// Criteria. Each returns pass/fail plus a one-line detail.

struct Outcome {
    bool pass = false;
    std::string detail;
};

Outcome c1_rayleigh() {
    const double lambda = 0.0857;
    const double d_f = rayleigh_distance(16, lambda / 2.0, lambda);
    return {std::abs(d_f - 9.6) <= 0.1,
            fmt("d_F(N=16, d=lambda/2, lambda=0.0857) = %.5f m, want 9.6 +/- 0.1", d_f)};
}

Outcome c2_gradients() {
    Timer t;
    const auto entries = run_gradient_suite(/*seed_base=*/1, /*n_seeds=*/10);
    double worst = 0.0;
    bool all = true;
    for (const auto& e : entries) {
        worst = std::max(worst, e.max_rel_err);
        all = all && e.pass();
    }
    const double sec = t.seconds();
    return {all && sec < 60.0,
            fmt("%zu layer+model checks x 10 seeds, worst rel err %.2e (< 1e-4), %.1f s (< 60)",
                entries.size(), worst, sec)};
}

Outcome c3_steering_limit() {
    const double lambda = 0.0857, d = lambda / 2.0;
    const std::size_t n = 16;
    const double r = 1e3 * rayleigh_distance(n, d, lambda);
    Rng rng(33);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        const double s = rng.uniform(-0.999, 0.999);
        const CVector near = steering_near(s, r, n, d, lambda);
        const CVector far = steering_far(s, n, d, lambda);
        for (std::size_t i = 0; i < n; ++i)
            worst = std::max(worst, std::abs(near[i] - far[i]));
    }
    return {worst < 1e-3,
            fmt("max componentwise |near(theta, 1e3 d_F) - far(theta)| = %.2e over 100 angles (< 1e-3)",
                worst)};
}

Outcome c4_ls_exactness() {
    SystemConfig sys = desk_system();
    sys.slots_per_episode = 4;
    const PilotBlock pilots = make_pilots(sys.pilot_len, sys.pilot_es());
    double worst = 0.0;
    std::size_t slots = 0;
    for (std::uint64_t e = 0; slots < 100; ++e) {
        const Episode ep = generate_episode(sys, derive_seed(555, e), /*sigma_sq=*/0.0);
        for (const SlotRecord& slot : ep.slots) {
            if (slots == 100) break;
            worst = std::max(worst,
                             nmse(ls_estimate(ReceivedBlock{slot.y}, pilots), slot.h_true));
            ++slots;
        }
    }
    return {worst < 1e-20,
            fmt("max zero-noise LS NMSE %.2e over 100 slots (< 1e-20)", worst)};
}

Outcome c5_convergence(Bench& b) {
    const Dataset& ds = b.base();
    Timer t;
    b.full = train_model(ds, desk_model(), desk_train());
    b.has_full = true;
    b.full_secs = t.seconds();
    const double sec = b.full_secs;

    const TrainHistory& h = b.full.history;
    const double ratio = h.train_loss[24] / h.train_loss[0];
    const std::size_t best = h.best_epoch;
    const double gap = std::abs(h.train_loss[best] - h.val_loss[best]) / h.val_loss[best];
    const bool pass = ratio <= 0.2 && gap <= 0.3 && sec <= 1800.0;
    return {pass,
            fmt("epoch25/epoch1 train loss %.3f (<= 0.2), |train-val|/val at best epoch %.3f (<= 0.3), %.0f s (<= 1800)",
                ratio, gap, sec)};
}

Outcome c6_estimator_ordering(Bench& b) {
    const Dataset& ds = b.base();
    const Checkpoint& full = b.full_model().checkpoint;

    // ablation gets the identical data and budget as the full model; the
    // 45-minute cap covers both trainings plus this evaluation
    Timer t;
    TrainConfig tc = desk_train();
    tc.ablation = Ablation::CnnOnly;
    b.cnn = train_model(ds, desk_model(), tc);
    b.has_cnn = true;

    const std::vector<WindowRef> val =
        extract_windows(ds, desk_model().t_history, /*val_split=*/true);
    const double ls = nmse_stat(nmse_ratios_ls(ds, val)).mean;
    const double net = nmse_stat(nmse_ratios_model(ds, val, full)).mean;
    const double cnn = nmse_stat(nmse_ratios_model(ds, val, b.cnn.checkpoint)).mean;
    const double sec = b.full_secs + t.seconds();

    const bool pass = net <= 0.5 * ls && net <= 0.7 * cnn && sec <= 2700.0;
    return {pass,
            fmt("val NMSE full %.4f vs ls %.4f (need <= 0.5x) and cnn %.4f (need <= 0.7x); trainings + eval %.0f s (<= 2700)",
                net, ls, cnn, sec)};
}

Outcome c7_snr_monotonic(Bench& b) {
    const Checkpoint& full = b.full_model().checkpoint;
    const Checkpoint& cnn = b.cnn_model().checkpoint;
    const CovarianceEstimate& cov = b.covariance();

    std::map<std::string, std::vector<double>> curve;
    for (double snr : kSnrGrid) {
        const Dataset& ds = b.eval_at_snr(snr);
        const std::vector<WindowRef> w = all_windows(ds, full.model.t_history);
        curve["ls"].push_back(nmse_stat(nmse_ratios_ls(ds, w)).mean);
        curve["lmmse"].push_back(nmse_stat(nmse_ratios_lmmse(ds, w, cov)).mean);
        curve["full"].push_back(nmse_stat(nmse_ratios_model(ds, w, full)).mean);
        curve["cnn"].push_back(nmse_stat(nmse_ratios_model(ds, w, cnn)).mean);
    }

    bool pass = true;
    std::string detail;
    for (const auto& [name, c] : curve) {
        int rises = 0;
        double worst_rise = 0.0;
        for (std::size_t i = 0; i + 1 < c.size(); ++i) {
            const double step = nmse_db(c[i + 1]) - nmse_db(c[i]);
            if (step > 0.0) {
                ++rises;
                worst_rise = std::max(worst_rise, step);
            }
        }
        if (rises > 1 || worst_rise > 0.5) pass = false;
        detail += fmt("%s%s %.1f->%.1f dB (rises %d, worst +%.2f dB)",
                      detail.empty() ? "" : "; ", name.c_str(), nmse_db(c.front()),
                      nmse_db(c.back()), rises, worst_rise);
    }
    return {pass, detail + " over 0..20 dB (<= 1 rise, each <= 0.5 dB)"};
}

Outcome c8_pilot_length(Bench& b) {
    const Checkpoint& q8 = b.full_model().checkpoint;

    SystemConfig sys2 = desk_system();
    sys2.pilot_len = 2;
    const Dataset ds2 = build_dataset(sys2, derive_seed(kBaseDataSeed, 8));
    // same data volume and budget as the Q=8 model under comparison
    const Checkpoint q2 = train_model(ds2, desk_model(), desk_train()).checkpoint;

    SystemConfig eval2 = sys2;
    eval2.episodes = kEvalEpisodes;
    const Dataset eval_q2 = build_dataset(eval2, kEvalSeed);
    const double db8 = nmse_db(model_stat(b.eval_at_snr(10.0), q8).mean);
    const double db2 = nmse_db(model_stat(eval_q2, q2).mean);
    return {db8 <= db2 - 1.0,
            fmt("full-model NMSE at 10 dB: Q=8 %.2f dB vs Q=2 %.2f dB (need >= 1 dB better)",
                db8, db2)};
}

Outcome c9_path_count() {
    // Equal training budget for both path counts; the gate is the SNR-curve
    // average in dB (each SNR weighted equally) with a 95% interval from
    // delta-method standard errors.
    std::map<int, double> mean_db, var_db;
    for (int paths : {4, 8}) {
        SystemConfig sys = desk_system();
        sys.n_paths = static_cast<std::size_t>(paths);
        const Dataset ds = build_dataset(sys, derive_seed(kBaseDataSeed, 900 + paths));
        const Checkpoint ckpt = train_model(ds, desk_model(), desk_train()).checkpoint;

        double m = 0.0, v = 0.0;
        for (double snr : kSnrGrid) {
            SystemConfig es = sys;
            es.snr_db = snr;
            es.episodes = kPathEvalEpisodes;
            const NmseStat st = model_stat(build_dataset(es, kEvalSeed), ckpt);
            m += nmse_db(st.mean);
            const double se_db =
                (10.0 / std::log(10.0)) * (st.ci_half_width / 1.96) / st.mean;
            v += se_db * se_db;
        }
        const double k = static_cast<double>(kSnrGrid.size());
        mean_db[paths] = m / k;
        var_db[paths] = v / (k * k);
    }
    const double gap = mean_db[8] - mean_db[4];
    const double ci = 1.96 * std::sqrt(var_db[4] + var_db[8]);
    return {gap > ci,
            fmt("SNR-curve mean NMSE: L=4 %.2f dB vs L=8 %.2f dB, gap %.3f dB > 95%% CI %.3f dB",
                mean_db[4], mean_db[8], gap, ci)};
}

Outcome c10_speed(Bench& b) {
    const Checkpoint& full = b.full_model().checkpoint;
    SystemConfig fast = desk_system();
    fast.v_ue_mps = 30.0;
    fast.episodes = kEvalEpisodes;
    const double slow = model_stat(b.eval_at_snr(10.0), full).mean;  // v_ue = 5
    const double quick = model_stat(build_dataset(fast, kEvalSeed), full).mean;
    return {slow <= quick,
            fmt("full-model NMSE at 10 dB: v_ue=5 %.4f <= v_ue=30 %.4f", slow, quick)};
}

Outcome c11_ber_ordering(Bench& b) {
    const Checkpoint& full = b.full_model().checkpoint;
    constexpr std::size_t kSymbols = 40000;

    bool pass = true;
    std::string detail;
    for (double snr : kSnrGrid) {
        const Dataset& ds = b.eval_at_snr(snr);
        const std::vector<WindowRef> w = all_windows(ds, full.model.t_history);
        const double sigma_sq = dataset_sigma_sq(ds);
        const PilotBlock pilots = make_pilots(ds.meta.system.pilot_len,
                                              ds.meta.system.pilot_es());
        const std::vector<CMatrix> net = model_estimates(ds, w, full);

        auto ber_of = [&](auto col_of) {
            std::vector<BerInput> slots;
            slots.reserve(w.size());
            for (std::size_t i = 0; i < w.size(); ++i) {
                const CMatrix& truth = detail_eval::window_slot(ds, w[i]).h_true;
                slots.push_back({first_column(truth), col_of(i, truth)});
            }
            Rng rng(derive_seed(kBerSeed, static_cast<std::uint64_t>(snr)));
            return ber_point(slots, sigma_sq, kSymbols, rng);
        };
        const double perfect = ber_of([&](std::size_t, const CMatrix& t) {
            return first_column(t);
        });
        const double model = ber_of([&](std::size_t i, const CMatrix&) {
            return first_column(net[i]);
        });
        const double ls = ber_of([&](std::size_t i, const CMatrix&) {
            const SlotRecord& slot = detail_eval::window_slot(ds, w[i]);
            return first_column(ls_estimate(ReceivedBlock{slot.y}, pilots));
        });

        // conservative paired-MC slack: independent-variance bound on the
        // standard error of a BER difference at 2*kSymbols bits
        auto slack = [&](double p1, double p2) {
            const double bits = 2.0 * static_cast<double>(kSymbols);
            return 1.96 * std::sqrt((p1 * (1 - p1) + p2 * (1 - p2)) / bits);
        };
        const bool ok = perfect <= model + slack(perfect, model) &&
                        model <= ls + slack(model, ls);
        pass = pass && ok;
        detail += fmt("%s%g dB %.4f/%.4f/%.4f", detail.empty() ? "" : "; ", snr,
                      perfect, model, ls);
    }
    return {pass, "BER perfect/full/ls " + detail + " (need perfect <= full <= ls)"};
}

Outcome c12_cli_determinism() {
#ifndef NFCE_CLI_PATH
    return {false, "CLI path not wired into the build"};
#else
    const fs::path root("accept_c12");
    fs::remove_all(root);
    fs::create_directories(root);

    RunConfig tiny;
    tiny.system.n_antennas = 4;
    tiny.system.pilot_len = 3;
    tiny.system.n_paths = 2;
    tiny.system.episodes = 12;
    tiny.system.slots_per_episode = 5;
    tiny.system.calib_episodes = 10;
    tiny.system.val_fraction = 0.25;
    tiny.model.l_conv = 2;
    tiny.model.c1 = 2;
    tiny.model.kernel = 3;
    tiny.model.n_heads = 2;
    tiny.model.d_h = 4;
    tiny.model.pos_width = 3;
    tiny.model.dense_hidden = 6;
    tiny.model.t_history = 3;
    tiny.train.epochs = 2;
    tiny.train.batch = 8;
    const std::string cfg = (root / "config.json").string();
    write_text_file(cfg, canonical_dump(to_json(tiny)));

    for (const char* run : {"a", "b"}) {
        const std::string dir = (root / run).string();
        for (const char* sub : {"generate", "train", "eval"}) {
            const std::string cmd = std::string("\"") + NFCE_CLI_PATH + "\" " + sub +
                                    " --config " + cfg + " --seed 42 --deterministic" +
                                    " --out " + dir + " >> " + dir + ".log 2>&1";
            if (std::system(cmd.c_str()) != 0)
                return {false, std::string(sub) + " run " + run + " failed, see " +
                                   dir + ".log"};
        }
    }
    bool same = true;
    std::string files;
    for (const char* f : {"dataset.nfce", "checkpoint.nfckpt", "results.csv"}) {
        const bool eq = read_text_file((root / "a" / f).string()) ==
                        read_text_file((root / "b" / f).string());
        same = same && eq;
        files += fmt("%s%s %s", files.empty() ? "" : ", ", f, eq ? "==" : "DIFFERS");
    }
    return {same, "two seeded generate->train->eval runs: " + files};
#endif
}

Outcome c13_roundtrip() {
    const fs::path root("accept_c13");
    fs::remove_all(root);
    fs::create_directories(root);

    SystemConfig sys;
    sys.n_antennas = 4;
    sys.pilot_len = 3;
    sys.n_paths = 2;
    sys.episodes = 6;
    sys.slots_per_episode = 4;
    sys.calib_episodes = 10;
    const Dataset ds = build_dataset(sys, 5);
    const std::string dpath = (root / "ds.nfce").string();
    write_dataset(ds, dpath);
    write_dataset(read_dataset(dpath), (root / "ds2.nfce").string());
    const bool ds_exact =
        read_text_file(dpath) == read_text_file((root / "ds2.nfce").string()) &&
        read_text_file(dpath + ".meta.json") ==
            read_text_file((root / "ds2.nfce").string() + ".meta.json");

    ModelConfig mc;
    mc.l_conv = 2;
    mc.c1 = 2;
    mc.kernel = 3;
    mc.n_heads = 2;
    mc.d_h = 4;
    mc.pos_width = 3;
    mc.dense_hidden = 6;
    mc.t_history = 3;
    Checkpoint ckpt;
    ckpt.model = mc;
    ckpt.ablation = Ablation::Full;
    ckpt.n_antennas = 4;
    ckpt.pilot_len = 3;
    Rng rng(2);
    EstimatorNet(mc, 4, 3, Ablation::Full).init(ckpt.params, rng);
    const std::string cpath = (root / "ck.nfckpt").string();
    save_checkpoint(ckpt, cpath);
    save_checkpoint(load_checkpoint(cpath), (root / "ck2.nfckpt").string());
    const bool ck_exact =
        read_text_file(cpath) == read_text_file((root / "ck2.nfckpt").string());

    // corrupted magic and version must be rejected before any payload parse
    auto rejects = [&](const std::string& src, std::size_t byte, char value,
                       const char* needle, bool is_ckpt) {
        const std::string bad = (root / (is_ckpt ? "bad.nfckpt" : "bad.nfce")).string();
        std::string bytes = read_text_file(src);
        bytes[byte] = value;
        write_text_file(bad, bytes);
        if (!is_ckpt)
            write_text_file(bad + ".meta.json", read_text_file(dpath + ".meta.json"));
        try {
            if (is_ckpt)
                (void)load_checkpoint(bad);
            else
                (void)read_dataset(bad);
            return false;
        } catch (const IoError& e) {
            return std::string(e.what()).find(needle) != std::string::npos;
        }
    };
    const bool magic_ck = rejects(cpath, 0, 'X', "magic", true);
    const bool version_ck = rejects(cpath, 6, 9, "version", true);
    const bool magic_ds = rejects(dpath, 0, 'X', "magic", false);
    const bool version_ds = rejects(dpath, 4, 9, "version", false);

    const bool pass = ds_exact && ck_exact && magic_ck && version_ck && magic_ds &&
                      version_ds;
    return {pass,
            fmt("dataset re-save %s, checkpoint re-save %s; corrupt magic/version rejected: ckpt %d/%d, dataset %d/%d",
                ds_exact ? "bit-exact" : "DIFFERS", ck_exact ? "bit-exact" : "DIFFERS",
                magic_ck, version_ck, magic_ds, version_ds)};
}

}  // namespace

int main() {
#if defined(__GLIBC__)
    // keep large tensor buffers on the reusable heap instead of paying an
    // mmap/munmap (and page-zeroing) round trip per training batch
    mallopt(M_MMAP_THRESHOLD, 1 << 28);
    mallopt(M_TRIM_THRESHOLD, 1 << 28);
#endif
    Bench bench;
    struct Entry {
        int id;
        const char* title;
        std::function<Outcome()> run;
    };
    const std::vector<Entry> criteria = {
        {1, "Rayleigh distance", [] { return c1_rayleigh(); }},
        {2, "gradient suite", [] { return c2_gradients(); }},
        {3, "near-to-far steering limit", [] { return c3_steering_limit(); }},
        {4, "LS exactness at zero noise", [] { return c4_ls_exactness(); }},
        {5, "convergence shape", [&] { return c5_convergence(bench); }},
        {6, "estimator ordering at 10 dB", [&] { return c6_estimator_ordering(bench); }},
        {7, "SNR monotonicity", [&] { return c7_snr_monotonic(bench); }},
        {8, "pilot-length trend", [&] { return c8_pilot_length(bench); }},
        {9, "path-count trend", [] { return c9_path_count(); }},
        {10, "speed trend", [&] { return c10_speed(bench); }},
        {11, "BER ordering", [&] { return c11_ber_ordering(bench); }},
        {12, "determinism end to end", [] { return c12_cli_determinism(); }},
        {13, "file round-trip and corruption", [] { return c13_roundtrip(); }},
    };

    int passed = 0;
    for (const Entry& c : criteria) {
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("[%2d] %s  %s: %s\n", c.id, o.pass ? "PASS" : "FAIL", c.title,
                    o.detail.c_str());
        std::fflush(stdout);
        if (o.pass) ++passed;
    }
    std::printf("acceptance: %d/13 criteria pass\n", passed);
    return passed == 13 ? 0 : 1;
}
