#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "nfce/dataset.hpp"
#include "nfce/serde.hpp"

using namespace nfce;
namespace fs = std::filesystem;

namespace {

SystemConfig small_config() {
    SystemConfig cfg;
    cfg.n_antennas = 8;
    cfg.pilot_len = 4;
    cfg.n_paths = 3;
    cfg.slots_per_episode = 6;
    cfg.episodes = 12;
    cfg.calib_episodes = 20;
    return cfg;
}

fs::path temp_path(const std::string& stem) {
    return fs::temp_directory_path() / (stem + "-" + std::to_string(::getpid()) + ".bin");
}

bool episodes_bit_identical(const Episode& a, const Episode& b) {
    if (a.slots.size() != b.slots.size()) return false;
    for (std::size_t t = 0; t < a.slots.size(); ++t) {
        const SlotRecord &x = a.slots[t], &y = b.slots[t];
        if (x.regime != y.regime || x.slot_index != y.slot_index) return false;
        if (std::memcmp(&x.r_uav, &y.r_uav, sizeof(Vec3)) != 0) return false;
        if (std::memcmp(&x.r_ue, &y.r_ue, sizeof(Vec3)) != 0) return false;
        if (x.y.a.size() != y.y.a.size() || x.h_true.a.size() != y.h_true.a.size())
            return false;
        if (std::memcmp(x.y.a.data(), y.y.a.data(), x.y.a.size() * sizeof(cplx)) != 0)
            return false;
        if (std::memcmp(x.h_true.a.data(), y.h_true.a.data(),
                        x.h_true.a.size() * sizeof(cplx)) != 0)
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("run config: json round trip preserves every field") {
    RunConfig c;
    c.system.n_antennas = 32;
    c.system.snr_db = 15.0;
    c.model.c1 = 48;
    c.model.t_history = 5;
    c.model.n_heads = 4;
    c.train.epochs = 7;
    c.train.cosine_lr = true;
    c.train.ablation = Ablation::CnnLstm;
    c.sweep.axis = SweepAxis::PilotLen;
    c.sweep.values = {2, 4, 8};
    c.sweep.estimators = {"ls", "full"};

    const RunConfig back = run_config_from_text(canonical_dump(to_json(c)), "test");
    CHECK(back.system.n_antennas == 32);
    CHECK(back.system.snr_db == 15.0);
    CHECK(back.model.c1 == 48);
    CHECK(back.model.t_history == 5);
    CHECK(back.train.epochs == 7);
    CHECK(back.train.cosine_lr);
    CHECK(back.train.ablation == Ablation::CnnLstm);
    CHECK(back.sweep.axis == SweepAxis::PilotLen);
    CHECK(back.sweep.values == std::vector<double>{2, 4, 8});
    CHECK(to_json(back) == to_json(c));
    CHECK(config_hash(back) == config_hash(c));
}

TEST_CASE("run config: unknown keys are rejected by name") {
    const std::string body = R"({"system": {"n_antennas": 16, "n_antenas": 8}})";
    CHECK_THROWS_WITH(run_config_from_text(body, "test"),
                      Catch::Matchers::ContainsSubstring("n_antenas"));
    CHECK_THROWS_AS(run_config_from_text(body, "test"), ValidationError);

    CHECK_THROWS_WITH(run_config_from_text(R"({"mdoel": {}})", "test"),
                      Catch::Matchers::ContainsSubstring("mdoel"));
    CHECK_THROWS_WITH(run_config_from_text("{invalid", "test"),
                      Catch::Matchers::ContainsSubstring("parse"));
    CHECK_THROWS_WITH(run_config_from_text(R"({"train": {"epochs": "many"}})", "test"),
                      Catch::Matchers::ContainsSubstring("epochs"));
}

TEST_CASE("run config: semantic validation still applies after parse") {
    // t_history beyond the episode length must be rejected
    const std::string body =
        R"({"system": {"slots_per_episode": 3}, "model": {"t_history": 9}})";
    CHECK_THROWS_AS(run_config_from_text(body, "test"), ValidationError);
}

TEST_CASE("generate_episode: shape contract at table defaults") {
    SystemConfig cfg;  // N=16, Q=8, 12 slots
    const Episode ep = generate_episode(cfg, 77, 0.05);
    REQUIRE(ep.slots.size() == 12);
    for (std::size_t t = 0; t < ep.slots.size(); ++t) {
        CHECK(ep.slots[t].slot_index == t);
        CHECK(ep.slots[t].y.rows == 16);
        CHECK(ep.slots[t].y.cols == 8);
        CHECK(ep.slots[t].h_true.rows == 16);
        CHECK(ep.slots[t].h_true.cols == 8);
    }
}

TEST_CASE("generate_episode: regime tags follow the rayleigh boundary") {
    // UE starts 5 m from the array moving radially outward at 5 m/s with
    // half-second slots: distances 5, 7.5, 10, 12.5, ... against d_F = 9.64.
    SystemConfig cfg;
    cfg.delta_t_s = 0.5;
    cfg.v_uav_mps = 0.0;
    cfg.v_ue_mps = 5.0;

    TrajectoryState init;
    init.r_uav = {0.0, 0.0, 20.0};
    init.r_ue = {3.0, 0.0, 16.0};  // 5 m away along direction (0.6, 0, -0.8)
    init.v_uav = {0.0, 0.0, 0.0};
    init.v_ue = {0.6 * 5.0, 0.0, -0.8 * 5.0};

    const Episode ep = generate_episode_from(init, cfg, 3, 0.0);
    REQUIRE(ep.slots.size() == 12);
    CHECK(ep.slots[0].regime == Regime::Near);
    CHECK(ep.slots[1].regime == Regime::Near);
    for (std::size_t t = 2; t < ep.slots.size(); ++t) CHECK(ep.slots[t].regime == Regime::Far);

    const double d_f = rayleigh_distance(cfg.n_antennas, cfg.spacing(), cfg.wavelength_m);
    for (const SlotRecord& s : ep.slots) {
        const double dist = (s.r_uav - s.r_ue).norm();
        CHECK(s.regime == classify_regime(dist, d_f));
    }
}

TEST_CASE("generate_episode: deterministic and seed-sensitive") {
    const SystemConfig cfg = small_config();
    const Episode a = generate_episode(cfg, 42, 0.1);
    const Episode b = generate_episode(cfg, 42, 0.1);
    const Episode c = generate_episode(cfg, 43, 0.1);
    CHECK(episodes_bit_identical(a, b));
    CHECK_FALSE(episodes_bit_identical(a, c));
}

TEST_CASE("generate_episode: noise scales with sigma, channel does not") {
    const SystemConfig cfg = small_config();
    const Episode clean = generate_episode(cfg, 9, 0.0);
    const Episode noisy = generate_episode(cfg, 9, 0.2);
    REQUIRE(clean.slots.size() == noisy.slots.size());
    double max_h_diff = 0.0, max_y_diff = 0.0;
    for (std::size_t t = 0; t < clean.slots.size(); ++t) {
        for (std::size_t i = 0; i < clean.slots[t].h_true.a.size(); ++i)
            max_h_diff = std::max(max_h_diff, std::abs(clean.slots[t].h_true.a[i] -
                                                       noisy.slots[t].h_true.a[i]));
        for (std::size_t i = 0; i < clean.slots[t].y.a.size(); ++i)
            max_y_diff = std::max(max_y_diff,
                                  std::abs(clean.slots[t].y.a[i] - noisy.slots[t].y.a[i]));
    }
    CHECK(max_h_diff == 0.0);  // same seed, same trajectory and paths
    CHECK(max_y_diff > 0.0);   // noise actually applied
}

TEST_CASE("generate_episode: UE inside the aperture is rejected") {
    SystemConfig cfg = small_config();
    TrajectoryState init;
    init.r_uav = {0.0, 0.0, 10.0};
    init.r_ue = {0.01, 0.0, 10.0};  // well inside N*d/2 = 0.17 m
    CHECK_THROWS_AS(generate_episode_from(init, cfg, 1, 0.0), ValidationError);
}

TEST_CASE("trajectory sampling respects configured ranges") {
    const SystemConfig cfg = small_config();
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const TrajectoryState s = sample_trajectory(cfg, rng);
        const double sep = s.separation();
        CHECK(sep >= cfg.ue_dist_min_m);
        CHECK(sep <= cfg.ue_dist_max_m);
        CHECK(s.r_uav.z >= cfg.uav_alt_min_m);
        CHECK(s.r_uav.z <= cfg.uav_alt_max_m);
        CHECK(s.r_ue.z >= 0.0);
        CHECK(s.v_uav.norm() == Catch::Approx(cfg.v_uav_mps).margin(1e-9));
        CHECK(s.v_ue.norm() == Catch::Approx(cfg.v_ue_mps).margin(1e-9));
    }
}

TEST_CASE("signal power calibration is positive, deterministic, near unity") {
    const SystemConfig cfg = small_config();
    const double p1 = calibrate_signal_power(cfg, 11);
    const double p2 = calibrate_signal_power(cfg, 11);
    CHECK(p1 == p2);
    CHECK(p1 > 0.0);
    // per-antenna pilot power ~ E||h||^2 / N = 1 with unit-power symbols
    CHECK(p1 == Catch::Approx(1.0).epsilon(0.5));
}

TEST_CASE("split: floor arithmetic and determinism") {
    SECTION("n=5 gives 4 train / 1 val") {
        const auto val = assign_val_episodes(5, 0.2, 3);
        CHECK(val.size() == 1);
    }
    SECTION("n=100 gives 80 train / 20 val") {
        const auto val = assign_val_episodes(100, 0.2, 3);
        CHECK(val.size() == 20);
        CHECK(std::is_sorted(val.begin(), val.end()));
        CHECK(std::adjacent_find(val.begin(), val.end()) == val.end());
        for (auto e : val) CHECK(e < 100);
    }
    SECTION("same master seed, same assignment; different seed differs") {
        const auto a = assign_val_episodes(50, 0.2, 7);
        const auto b = assign_val_episodes(50, 0.2, 7);
        const auto c = assign_val_episodes(50, 0.2, 8);
        CHECK(a == b);
        CHECK(a != c);
    }
}

TEST_CASE("build_dataset: split coverage and train-only normalization") {
    SystemConfig cfg = small_config();
    const Dataset ds = build_dataset(cfg, 21);
    REQUIRE(ds.episodes.size() == cfg.episodes);
    CHECK(ds.meta.val_episodes.size() ==
          static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(cfg.episodes)));
    CHECK(ds.meta.finalized());

    // normalized train-plane statistics: mean 0, scale 1 by construction
    double sum = 0.0, abs_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
        if (ds.meta.is_val(e)) continue;
        for (const SlotRecord& slot : ds.episodes[e].slots) {
            const ModelInput in = preprocess(slot, ds.meta);
            for (double v : in.image.vec()) {
                sum += v;
                abs_sum += std::abs(v);
            }
            count += in.image.vec().size();
        }
    }
    REQUIRE(count > 0);
    CHECK(std::abs(sum / static_cast<double>(count)) < 1e-9);
    const double mean_abs = abs_sum / static_cast<double>(count);
    CHECK(mean_abs >= 0.5);
    CHECK(mean_abs <= 2.0);
}

TEST_CASE("preprocess: plane layout, raw positions, unnormalized target") {
    DatasetMeta meta;
    meta.signal_power = 1.0;
    meta.norm_mean = {0.0, 0.0};
    meta.norm_scale = {1.0, 1.0};

    SECTION("1x1 identity-normalized image splits real and imaginary") {
        SlotRecord slot;
        slot.y = CMatrix(1, 1);
        slot.y.at(0, 0) = cplx(1.0, 2.0);
        slot.h_true = CMatrix(1, 1);
        slot.h_true.at(0, 0) = cplx(-3.0, 4.0);
        slot.r_uav = {1, 2, 3};
        slot.r_ue = {4, 5, 6};
        const ModelInput in = preprocess(slot, meta);
        CHECK(in.image.shape() == Shape{2, 1, 1});
        CHECK(in.image.vec()[0] == 1.0);
        CHECK(in.image.vec()[1] == 2.0);
        CHECK(in.positions.vec() == std::vector<double>{1, 2, 3, 4, 5, 6});
        CHECK(in.target.vec() == std::vector<double>{-3.0, 4.0});
    }

    SECTION("2x2 target ordering: all real parts row-major, then imaginary") {
        SlotRecord slot;
        slot.y = CMatrix(2, 2);
        slot.h_true = CMatrix(2, 2);
        slot.h_true.at(0, 0) = cplx(1, 5);
        slot.h_true.at(0, 1) = cplx(2, 6);
        slot.h_true.at(1, 0) = cplx(3, 7);
        slot.h_true.at(1, 1) = cplx(4, 8);
        const ModelInput in = preprocess(slot, meta);
        REQUIRE(in.target.shape() == Shape{8});
        CHECK(in.target.vec() == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
    }

    SECTION("normalization shifts inputs but never the target") {
        meta.norm_mean = {2.0, -1.0};
        meta.norm_scale = {4.0, 0.5};
        SlotRecord slot;
        slot.y = CMatrix(1, 1);
        slot.y.at(0, 0) = cplx(6.0, 1.0);
        slot.h_true = CMatrix(1, 1);
        slot.h_true.at(0, 0) = cplx(9.0, -9.0);
        const ModelInput in = preprocess(slot, meta);
        CHECK(in.image.vec()[0] == 1.0);  // (6-2)/4
        CHECK(in.image.vec()[1] == 4.0);  // (1+1)/0.5
        CHECK(in.target.vec() == std::vector<double>{9.0, -9.0});
    }

    SECTION("unfinalized meta is rejected") {
        DatasetMeta blank;
        SlotRecord slot;
        slot.y = CMatrix(1, 1);
        slot.h_true = CMatrix(1, 1);
        CHECK_THROWS_AS(preprocess(slot, blank), ValidationError);
    }
}

TEST_CASE("dataset file: round trip is bit-identical") {
    SystemConfig cfg = small_config();
    cfg.episodes = 6;
    const Dataset ds = build_dataset(cfg, 31);
    const fs::path path = temp_path("nfce-roundtrip");
    write_dataset(ds, path.string());

    const Dataset back = read_dataset(path.string());
    CHECK(to_json(back.meta) == to_json(ds.meta));
    REQUIRE(back.episodes.size() == ds.episodes.size());
    for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
        CHECK(back.episodes[e].seed == ds.episodes[e].seed);
        CHECK(episodes_bit_identical(back.episodes[e], ds.episodes[e]));
    }

    fs::remove(path);
    fs::remove(meta_sidecar_path(path.string()));
}

TEST_CASE("dataset file: corruption is reported, never silently accepted") {
    SystemConfig cfg = small_config();
    cfg.episodes = 5;
    cfg.slots_per_episode = 3;
    const Dataset ds = build_dataset(cfg, 8);
    const fs::path path = temp_path("nfce-corrupt");
    write_dataset(ds, path.string());
    const auto full_size = fs::file_size(path);

    SECTION("wrong magic") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXX", 4);
        f.close();
        CHECK_THROWS_AS(read_dataset(path.string()), IoError);
        CHECK_THROWS_WITH(read_dataset(path.string()),
                          Catch::Matchers::ContainsSubstring("magic"));
    }

    SECTION("unsupported version") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const char v2[4] = {2, 0, 0, 0};
        f.write(v2, 4);
        f.close();
        CHECK_THROWS_WITH(read_dataset(path.string()),
                          Catch::Matchers::ContainsSubstring("version"));
    }

    SECTION("truncation carries a byte offset") {
        fs::resize_file(path, full_size - 64);
        CHECK_THROWS_AS(read_dataset(path.string()), IoError);
        CHECK_THROWS_WITH(read_dataset(path.string()),
                          Catch::Matchers::ContainsSubstring("byte"));
    }

    SECTION("trailing garbage is rejected") {
        std::ofstream f(path, std::ios::app | std::ios::binary);
        f.write("tail", 4);
        f.close();
        CHECK_THROWS_WITH(read_dataset(path.string()),
                          Catch::Matchers::ContainsSubstring("trailing"));
    }

    SECTION("missing sidecar") {
        fs::remove(meta_sidecar_path(path.string()));
        CHECK_THROWS_AS(read_dataset(path.string()), IoError);
    }

    fs::remove(path);
    fs::remove(meta_sidecar_path(path.string()));
}

TEST_CASE("dataset meta sidecar: strict keys and value checks") {
    DatasetMeta m;
    m.system = small_config();
    m.signal_power = 1.25;
    m.norm_mean = {0.01, -0.02};
    m.norm_scale = {0.9, 1.1};
    m.val_episodes = {1, 4};
    m.seed = 0xDEADBEEFCAFEF00DULL;

    const DatasetMeta back = dataset_meta_from_json(to_json(m));
    CHECK(to_json(back) == to_json(m));
    CHECK(back.seed == m.seed);

    json j = to_json(m);
    j["extra"] = 1;
    CHECK_THROWS_WITH(dataset_meta_from_json(j), Catch::Matchers::ContainsSubstring("extra"));

    json v = to_json(m);
    v["format_version"] = 9;
    CHECK_THROWS_AS(dataset_meta_from_json(v), ValidationError);
}
