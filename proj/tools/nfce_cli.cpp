#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>

#include "nfce/evaluator.hpp"
#include "nfce/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace nfce;

namespace {

enum LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

int g_log_level = kWarn;

void init_log_level() {
    const char* env = std::getenv("NFCE_LOG");
    if (!env) return;
    const std::string v(env);
    if (v == "error") g_log_level = kError;
    else if (v == "warn") g_log_level = kWarn;
    else if (v == "info") g_log_level = kInfo;
    else if (v == "debug") g_log_level = kDebug;
    else
        throw ValidationError("NFCE_LOG must be one of error|warn|info|debug, got '" +
                              v + "'");
}

void log_at(int level, const char* tag, const std::string& msg) {
    if (level <= g_log_level) std::cerr << "[" << tag << "] " << msg << "\n";
}
void log_error(const std::string& m) { log_at(kError, "error", m); }
void log_info(const std::string& m) { log_at(kInfo, "info", m); }
void log_debug(const std::string& m) { log_at(kDebug, "debug", m); }

RunConfig load_config(const std::string& spec) {
    if (spec == "default") return RunConfig{};
    return run_config_from_text(read_text_file(spec), spec);
}

fs::path prepare_out_dir(const std::string& out) {
    fs::path dir(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + out + ": " + ec.message());
    return dir;
}

int cmd_generate(const RunConfig& cfg, std::uint64_t seed, const fs::path& out) {
    const Dataset ds = build_dataset(cfg.system, seed);
    const std::string path = (out / "dataset.nfce").string();
    write_dataset(ds, path);
    log_info("wrote " + path + " (" + std::to_string(ds.episodes.size()) +
             " episodes, seed " + std::to_string(seed) + ")");
    return 0;
}

int cmd_train(const RunConfig& cfg, bool seed_given, std::uint64_t seed,
              const fs::path& out) {
    const Dataset ds = read_dataset((out / "dataset.nfce").string());
    TrainConfig tc = cfg.train;
    if (seed_given) tc.seed = seed;

    EpochHook hook;
    if (tc.checkpoint_every > 0) {
        hook = [&](std::size_t epoch, const Checkpoint& ckpt, const TrainHistory&) {
            if ((epoch + 1) % tc.checkpoint_every != 0) return;
            const std::string path =
                (out / ("checkpoint_epoch" + std::to_string(epoch + 1) + ".nfckpt"))
                    .string();
            save_checkpoint(ckpt, path);
            log_debug("wrote " + path);
        };
    }
    const TrainResult res = train_model(ds, cfg.model, tc, hook);

    const std::string ckpt_path = (out / "checkpoint.nfckpt").string();
    save_checkpoint(res.checkpoint, ckpt_path);
    const std::string csv_path = (out / "history.csv").string();
    write_history_csv(res.history, csv_path);
    log_info("wrote " + ckpt_path + " and " + csv_path + " (best epoch " +
             std::to_string(res.history.best_epoch + 1) + ", val loss " +
             fmt_double(res.history.val_loss[res.history.best_epoch]) + ")");
    return 0;
}

int cmd_eval(std::uint64_t seed, const fs::path& out) {
    const Dataset ds = read_dataset((out / "dataset.nfce").string());
    const Checkpoint ckpt = load_checkpoint((out / "checkpoint.nfckpt").string());
    validate_checkpoint_shapes(ckpt);

    const std::vector<WindowRef> windows =
        extract_windows(ds, ckpt.model.t_history, /*val_split=*/true);
    const double sigma_sq = dataset_sigma_sq(ds);
    const PilotBlock pilots =
        make_pilots(ds.meta.system.pilot_len, ds.meta.system.pilot_es());
    const CovarianceEstimate cov = train_covariance(ds);

    // one estimate set per estimator on the identical validation slots
    std::vector<CMatrix> ls_set, lmmse_set, perfect_set;
    for (const WindowRef& w : windows) {
        const SlotRecord& slot = ds.episodes[w.episode].slots[w.last_slot];
        ls_set.push_back(ls_estimate(ReceivedBlock{slot.y}, pilots));
        lmmse_set.push_back(lmmse_estimate(ReceivedBlock{slot.y}, pilots, cov, sigma_sq));
        perfect_set.push_back(slot.h_true);
    }
    std::vector<std::pair<std::string, std::vector<CMatrix>>> sets;
    sets.emplace_back("ls", std::move(ls_set));
    sets.emplace_back("lmmse", std::move(lmmse_set));
    sets.emplace_back(ablation_name(ckpt.ablation), model_estimates(ds, windows, ckpt));
    sets.emplace_back("perfect_csi", std::move(perfect_set));

    ResultTable table;
    for (const auto& [name, est] : sets) {
        std::vector<double> ratios;
        std::vector<BerInput> slots;
        ratios.reserve(windows.size());
        for (std::size_t w = 0; w < windows.size(); ++w) {
            const CMatrix& truth =
                ds.episodes[windows[w].episode].slots[windows[w].last_slot].h_true;
            ratios.push_back(nmse(est[w], truth));
            slots.push_back({first_column(truth), first_column(est[w])});
        }
        const NmseStat stat = nmse_stat(ratios);
        Rng ber_rng(derive_seed(seed, 1ULL << 52));  // identical draws per estimator
        table.rows.push_back({"snr_db", ds.meta.system.snr_db, name, stat.mean,
                              nmse_db(stat.mean), ber_point(slots, sigma_sq, 10000, ber_rng),
                              true, stat.ci_half_width});
    }
    table.metadata = json{{"axis", "snr_db"},
                          {"values", json::array({ds.meta.system.snr_db})},
                          {"estimators", json::array({"ls", "lmmse",
                                                      ablation_name(ckpt.ablation),
                                                      "perfect_csi"})},
                          {"seed", seed},
                          {"eval_episodes", ds.meta.val_episodes.size()},
                          {"dataset_seed", ds.meta.seed}};

    const std::string path = (out / "results.csv").string();
    write_result_csv(table, path);
    log_info("wrote " + path);
    return 0;
}

int cmd_sweep(const RunConfig& cfg_in, bool seed_given, std::uint64_t seed,
              const fs::path& out) {
    RunConfig cfg = cfg_in;
    if (seed_given) cfg.sweep.seed = seed;
    const ResultTable table = run_sweep(cfg);
    const std::string path = (out / "sweep.csv").string();
    write_result_csv(table, path);
    log_info("wrote " + path + " (" + std::to_string(table.rows.size()) + " rows)");
    return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
    const auto entries = run_gradient_suite(seed, 10);
    bool all_pass = true;
    for (const GradCheckEntry& e : entries) {
        const bool ok = e.pass();
        all_pass = all_pass && ok;
        std::printf("%-20s max_rel_err %.3e  %s\n", e.name.c_str(), e.max_rel_err,
                    ok ? "PASS" : "FAIL");
    }
    std::printf("gradient suite: %s\n", all_pass ? "PASS" : "FAIL");
    return all_pass ? 0 : 2;
}

int cmd_flops(const RunConfig& cfg) {
    const FlopCounts f =
        estimate_flops(cfg.model, 1, cfg.system.n_antennas, cfg.system.pilot_len);
    std::printf("conv       %llu\n", static_cast<unsigned long long>(f.conv));
    std::printf("attention  %llu\n", static_cast<unsigned long long>(f.attention));
    std::printf("bilstm     %llu\n", static_cast<unsigned long long>(f.bilstm));
    std::printf("dense      %llu\n", static_cast<unsigned long long>(f.dense));
    std::printf("total      %llu\n", static_cast<unsigned long long>(f.total()));
    return 0;
}

int run(int argc, char** argv) {
    CLI::App app{"simulator and estimator workbench for near/far-field MIMO channels"};
    app.fallthrough();
    app.require_subcommand(1);

    std::string config = "default";
    std::uint64_t seed = 1;
    std::string out = ".";
    unsigned threads = 1;
    bool deterministic = false;
    app.add_option("--config", config, "config file path, or 'default'");
    auto* seed_opt = app.add_option("--seed", seed, "master seed (default 1)");
    app.add_option("--out", out, "output directory (default .)");
    app.add_option("--threads", threads, "worker thread cap")
        ->check(CLI::PositiveNumber);
    app.add_flag("--deterministic", deterministic,
                 "force single-threaded, bit-reproducible numerics");

    auto* c_generate = app.add_subcommand("generate", "synthesize a dataset");
    auto* c_train = app.add_subcommand("train", "train the estimator on a dataset");
    auto* c_eval = app.add_subcommand("eval", "score estimators on the validation split");
    auto* c_sweep = app.add_subcommand("sweep", "run the configured experiment sweep");
    auto* c_gradcheck =
        app.add_subcommand("gradcheck", "finite-difference check of every layer");
    auto* c_flops = app.add_subcommand("flops", "complexity estimate for the config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    init_log_level();
    if (deterministic) threads = 1;
    if (threads > 1)
        log_info("computation is single-threaded; --threads " +
                 std::to_string(threads) + " only caps future concurrency");

    const RunConfig cfg = load_config(config);
    const bool seed_given = seed_opt->count() > 0;

    if (*c_gradcheck) return cmd_gradcheck(seed_given ? seed : 7);
    if (*c_flops) return cmd_flops(cfg);

    const fs::path out_dir = prepare_out_dir(out);
    if (*c_generate) return cmd_generate(cfg, seed, out_dir);
    if (*c_train) return cmd_train(cfg, seed_given, seed, out_dir);
    if (*c_eval) return cmd_eval(seed, out_dir);
    if (*c_sweep) return cmd_sweep(cfg, seed_given, seed, out_dir);
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
    // keep large tensor buffers on the reusable heap instead of paying an
    // mmap/munmap (and page-zeroing) round trip per training batch
    mallopt(M_MMAP_THRESHOLD, 1 << 28);
    mallopt(M_TRIM_THRESHOLD, 1 << 28);
#endif
    try {
        return run(argc, argv);
    } catch (const ValidationError& e) {
        log_error(e.what());
        return 1;
    } catch (const NumericError& e) {
        log_error(e.what());
        return 2;
    } catch (const IoError& e) {
        log_error(e.what());
        return 3;
    } catch (const std::exception& e) {
        log_error(e.what());
        return 1;
    }
}
