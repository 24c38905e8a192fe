#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pf/eval.hpp"
#include "pf/rng.hpp"

using namespace pf;
namespace fs = std::filesystem;

namespace {

DetectorConfig mini_cfg() {
    DetectorConfig cfg;
    cfg.grid_size = 4;
    cfg.boxes_per_cell = 2;
    cfg.class_count = 8;
    cfg.input_size = 32;
    cfg.conv_widths = {4, 8, 12};
    cfg.kernel_size = 3;
    return cfg;
}

std::vector<Frame> mini_frames(int image_size = 32) {
    auto spec = SceneSpec::defaults();
    spec.image_size = image_size;
    spec.pixel_noise = 0.0;
    std::vector<Frame> frames;
    for (double a : {-30.0, 0.0, 30.0}) frames.push_back(render_frame(spec, a, spec.target_class));
    return frames;
}

std::string temp_file(const char* name) {
    return (fs::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("a zero detector reports everything as the first class") {
    auto det = Detector::zero_init(mini_cfg());
    auto frames = mini_frames();
    std::vector<Patch> patches = {init_patch(0, 8, 3)};

    // objectness sits exactly at the 0.5 threshold, class argmax ties to 0,
    // so the target class never disappears
    auto clean = clean_baseline(det, frames, 0);
    CHECK(clean.metric == "clean");
    CHECK(clean.rate == 0.0);
    REQUIRE(clean.frames.size() == frames.size());
    for (const auto& rec : clean.frames) {
        CHECK(rec.hits > 0);
        CHECK_FALSE(rec.success);
    }

    auto attack = attack_success_rate(det, frames, patches, 0);
    CHECK(attack.metric == "attack");
    CHECK(attack.rate == 0.0);
    CHECK(attack.classes == std::vector<int>{0});

    // nothing is ever assigned to the other classes
    auto semantic = semantic_success_rate(det, frames, patches, {1, 2});
    CHECK(semantic.metric == "semantic");
    CHECK(semantic.rate == 100.0);

    auto transfer = cross_model_eval(det, frames, patches, 0);
    CHECK(transfer.metric == "transfer");
    CHECK(transfer.rate == 0.0);

    CHECK_THROWS_AS(clean_baseline(det, {}, 0), Error);
    CHECK_THROWS_AS(semantic_success_rate(det, frames, patches, {}), Error);
}

TEST_CASE("semantic success never beats plain success on the same inputs") {
    auto frames = mini_frames();
    std::vector<Patch> patches = {init_patch(0, 8, 17), init_patch(1, 8, 17)};
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        auto det = Detector::random_init(mini_cfg(), seed);
        const double plain = attack_success_rate(det, frames, patches, 0).rate;
        const double semantic = semantic_success_rate(det, frames, patches, {0, 1, 2}).rate;
        CHECK(semantic <= plain);
    }
}

TEST_CASE("plan-driven evaluation picks the subset for each frame") {
    auto det = Detector::zero_init(mini_cfg());
    auto frames = mini_frames();
    SplitPlan plan;
    plan.k = 2;
    plan.loss = LossKind::ObjCls;
    plan.boundaries = {-45.0, 0.0, 45.0};
    plan.subset_patches = {{init_patch(0, 8, 1)}, {init_patch(0, 8, 2)}};

    auto report = attack_success_rate(det, frames, plan, 0);
    CHECK(report.loss_kind == "obj_cls");
    REQUIRE(report.per_bin.size() == 2);
    REQUIRE(report.frames.size() == 3);
    CHECK(report.frames[0].bin == 0); // -30 degrees
    CHECK(report.frames[1].bin == 1); // 0 sits on the boundary
    CHECK(report.frames[2].bin == 1);
    CHECK(report.rate == 0.0);

    auto transfer = cross_model_eval(det, frames, plan, 0);
    CHECK(transfer.metric == "transfer");
}

TEST_CASE("objectness heatmap sums box confidences per cell") {
    auto cfg = mini_cfg();
    auto det = Detector::zero_init(cfg);
    auto frames = mini_frames();
    auto m = objectness_heatmap(det, frames[0].image);
    CHECK(m.kind == "objectness-sum");
    CHECK(m.size == cfg.grid_size);
    REQUIRE(m.cells.size() == 16);
    for (double v : m.cells) CHECK(v == doctest::Approx(1.0)); // 2 boxes x sigmoid(0)
    CHECK(heatmap_total(m) == doctest::Approx(16.0));

    auto cmap = class_map(det, frames[0].image);
    CHECK(cmap.kind == "class-argmax");
    for (double v : cmap.cells) CHECK(v == 0.0);
}

TEST_CASE("heatmaps agree with direct recomputation from the raw grid") {
    auto cfg = mini_cfg();
    auto det = Detector::random_init(cfg, 31);
    auto frames = mini_frames();
    auto raw = forward(det, frames[1].image);
    auto m = objectness_heatmap(det, frames[1].image);
    auto cmap = class_map(det, frames[1].image);

    for (int cy = 0; cy < raw.S; ++cy)
        for (int cx = 0; cx < raw.S; ++cx) {
            double want = 0;
            for (int b = 0; b < raw.B; ++b) {
                const double to = raw.t->values[flat_index(raw.t->shape, {cy, cx, b, 4})];
                want += 1.0 / (1.0 + std::exp(-to));
            }
            CHECK(m.cells[static_cast<std::size_t>(cy) * raw.S + cx] == doctest::Approx(want));

            int best_c = 0;
            double best_p = -1;
            for (int b = 0; b < raw.B; ++b) {
                double mx = raw.t->values[flat_index(raw.t->shape, {cy, cx, b, 5})];
                for (int c = 1; c < raw.C; ++c)
                    mx = std::max(mx, raw.t->values[flat_index(raw.t->shape, {cy, cx, b, 5 + c})]);
                double denom = 0;
                std::vector<double> e(static_cast<std::size_t>(raw.C));
                for (int c = 0; c < raw.C; ++c) {
                    e[static_cast<std::size_t>(c)] =
                        std::exp(raw.t->values[flat_index(raw.t->shape, {cy, cx, b, 5 + c})] - mx);
                    denom += e[static_cast<std::size_t>(c)];
                }
                for (int c = 0; c < raw.C; ++c)
                    if (e[static_cast<std::size_t>(c)] / denom > best_p) {
                        best_p = e[static_cast<std::size_t>(c)] / denom;
                        best_c = c;
                    }
            }
            CHECK(cmap.cells[static_cast<std::size_t>(cy) * raw.S + cx] == best_c);
        }
}

TEST_CASE("cells_in_box selects grid cells whose centers fall inside") {
    Box all{0.5, 0.5, 1.0, 1.0};
    CHECK(cells_in_box(4, all).size() == 16);

    Box corner{0.1, 0.1, 0.05, 0.05};
    auto got = cells_in_box(4, corner); // only the (0,0) center at 0.125 fits
    REQUIRE(got.size() == 1);
    CHECK(got[0] == std::pair<int, int>{0, 0});

    Box nothing{0.01, 0.01, 0.001, 0.001};
    CHECK(cells_in_box(4, nothing).empty());

    Box half{0.25, 0.5, 0.5, 1.0};
    CHECK(cells_in_box(4, half).size() == 8);
}

TEST_CASE("report writers emit parseable json and per-frame csv") {
    auto det = Detector::zero_init(mini_cfg());
    auto frames = mini_frames();
    auto report = clean_baseline(det, frames, 0);

    const std::string jpath = temp_file("pf_report.json");
    save_report_json(report, jpath);
    std::ifstream in(jpath);
    nlohmann::json j;
    in >> j;
    CHECK(j.at("metric") == "clean");
    CHECK(j.at("rate_percent").get<double>() == 0.0);
    CHECK(j.at("frame_count").get<std::size_t>() == frames.size());
    CHECK(j.at("classes").get<std::vector<int>>() == std::vector<int>{0});

    const std::string cpath = temp_file("pf_report.csv");
    save_report_csv(report, cpath);
    std::ifstream cin_(cpath);
    std::string line;
    int lines = 0;
    while (std::getline(cin_, line))
        if (!line.empty()) ++lines;
    CHECK(lines == static_cast<int>(frames.size()) + 1);
    std::remove(jpath.c_str());
    std::remove(cpath.c_str());
}

TEST_CASE("heatmap writers round the grid into csv and ppm") {
    HeatMap m;
    m.size = 2;
    m.kind = "objectness-sum";
    m.cells = {0.0, 0.5, 1.25, 2.0};

    const std::string cpath = temp_file("pf_heat.csv");
    save_heatmap_csv(m, cpath);
    std::ifstream in(cpath);
    std::string l1, l2;
    std::getline(in, l1);
    std::getline(in, l2);
    CHECK(l1 == "0,0.5");
    CHECK(l2 == "1.25,2");

    const std::string ppath = temp_file("pf_heat.ppm");
    save_heatmap_ppm(m, ppath, 0.0, 2.0, 4);
    std::ifstream pin(ppath, std::ios::binary);
    std::string magic;
    int w = 0, h = 0, maxv = 0;
    pin >> magic >> w >> h >> maxv;
    CHECK(magic == "P6");
    CHECK(w == 8);
    CHECK(h == 8);
    CHECK(maxv == 255);

    CHECK_THROWS_AS(save_heatmap_ppm(m, ppath, 2.0, 2.0, 4), Error);
    CHECK_THROWS_AS(save_heatmap_ppm(m, ppath, 0.0, 2.0, 0), Error);
    std::remove(cpath.c_str());
    std::remove(ppath.c_str());
}

TEST_CASE("screen size sweep regenerates scenes and rejects bad ratios") {
    auto spec = SceneSpec::defaults();
    spec.image_size = 32;
    spec.frames_per_degree = 0.1;
    auto det = Detector::random_init(mini_cfg(), 5);

    AttackConfig cfg;
    cfg.patch_size = 6;
    cfg.epochs = 0; // seed patches only; the plumbing is what matters here
    cfg.batch_size = 4;

    CHECK_THROWS_AS(screen_size_sweep(spec, {}, cfg, det), Error);
    CHECK_THROWS_AS(screen_size_sweep(spec, {-0.1}, cfg, det), Error);
    CHECK_THROWS_AS(screen_size_sweep(spec, {1.5}, cfg, det), Error);

    auto points = screen_size_sweep(spec, {0.0, 0.1}, cfg, det);
    REQUIRE(points.size() == 2);
    CHECK(points[0].ratio == 0.0);
    CHECK(points[1].ratio == 0.1);
    for (const auto& p : points) {
        CHECK(p.rate >= 0.0);
        CHECK(p.rate <= 100.0);
    }

    const std::string path = temp_file("pf_sweep.csv");
    save_sweep_csv(points, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "ratio,success_rate_percent");
    int rows = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
    std::remove(path.c_str());
}
