#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "pf/attack.hpp"
#include "pf/detector.hpp"
#include "pf/rng.hpp"
#include "pf/scenegen.hpp"
#include "pf/tensor.hpp"

using namespace pf;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

RawGridOutput random_raw(int S, int B, int C, Rng& rng) {
    RawGridOutput raw;
    raw.S = S;
    raw.B = B;
    raw.C = C;
    raw.t = Tensor::random_uniform({S, S, B, 5 + C}, -4.0, 4.0, rng, true);
    return raw;
}

// per-slot class distribution, same max-subtracted softmax as the library
std::vector<double> slot_probs(const RawGridOutput& raw, int cy, int cx, int b) {
    const int F = 5 + raw.C;
    const std::size_t base =
        ((static_cast<std::size_t>(cy) * raw.S + cx) * raw.B + b) * static_cast<std::size_t>(F);
    const auto& v = raw.t->values;
    double m = v[base + 5];
    for (int c = 1; c < raw.C; ++c) m = std::max(m, v[base + 5 + c]);
    std::vector<double> p(static_cast<std::size_t>(raw.C));
    double sum = 0.0;
    for (int c = 0; c < raw.C; ++c) {
        p[static_cast<std::size_t>(c)] = std::exp(v[base + 5 + c] - m);
        sum += p[static_cast<std::size_t>(c)];
    }
    for (double& x : p) x /= sum;
    return p;
}

double slot_obj(const RawGridOutput& raw, int cy, int cx, int b) {
    const int F = 5 + raw.C;
    const std::size_t base =
        ((static_cast<std::size_t>(cy) * raw.S + cx) * raw.B + b) * static_cast<std::size_t>(F);
    return sig(raw.t->values[base + 4]);
}

Detection make_det(double obj, int cls, Box box, int slot) {
    Detection d;
    d.objectness = obj;
    d.class_id = cls;
    d.box = box;
    d.slot_index = slot;
    return d;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("iou basics") {
    Box a{0.5, 0.5, 0.4, 0.4};
    CHECK(iou(a, a) == doctest::Approx(1.0));
    CHECK(iou(a, Box{0.9, 0.9, 0.1, 0.1}) == 0.0);
    // half-overlapping unit squares shifted by half a side
    Box u{0.5, 0.5, 0.2, 0.2}, v{0.6, 0.5, 0.2, 0.2};
    CHECK(iou(u, v) == doctest::Approx(0.5 / 1.5));
}

TEST_CASE("decode keeps slots at or above the objectness threshold") {
    RawGridOutput raw;
    raw.S = 2;
    raw.B = 1;
    raw.C = 3;
    raw.t = Tensor::leaf({2, 2, 1, 8}, 0.0);
    // all objectness logits 0 -> sigmoid exactly 0.5
    CHECK(decode(raw, 0.5).size() == 4);  // >= tau keeps them
    CHECK(decode(raw, 0.51).empty());

    // single confident slot at cell (1,0), centered box
    raw.t = Tensor::leaf({2, 2, 1, 8}, -9.0);
    const std::size_t base = flat_index({2, 2, 1, 8}, {1, 0, 0, 0});
    raw.t->values[base + 0] = 0.0;  // tx
    raw.t->values[base + 1] = 0.0;  // ty
    raw.t->values[base + 2] = 0.0;  // tw
    raw.t->values[base + 3] = 0.0;  // th
    raw.t->values[base + 4] = 3.0;  // to
    raw.t->values[base + 6] = 2.0;  // class 1 wins
    auto dets = decode(raw, 0.5);
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].objectness == doctest::Approx(sig(3.0)));
    CHECK(dets[0].box.cx == doctest::Approx(0.25));  // (cx=0 + 0.5) / S
    CHECK(dets[0].box.cy == doctest::Approx(0.75));  // (cy=1 + 0.5) / S
    CHECK(dets[0].box.w == doctest::Approx(0.5));
    CHECK(dets[0].class_id == 1);
    CHECK(dets[0].slot_index == 2);
    CHECK(dets[0].class_probs.size() == 3);
}

TEST_CASE("decode class argmax ties pick the lowest class id") {
    RawGridOutput raw;
    raw.S = 1;
    raw.B = 1;
    raw.C = 4;
    raw.t = Tensor::leaf({1, 1, 1, 9}, 0.0);
    auto dets = decode(raw, 0.5);
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].class_id == 0);
}

TEST_CASE("nms greedy oracle on random boxes") {
    Rng rng(21);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<Detection> dets;
        const int n = rng.uniform_int(2, 7);
        for (int i = 0; i < n; ++i) {
            Box b{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.1, 0.5),
                  rng.uniform(0.1, 0.5)};
            dets.push_back(make_det(rng.uniform(0.5, 1.0), rng.uniform_int(0, 1), b, i));
        }
        const double thr = 0.4;
        auto got = nms(dets, thr);

        // oracle: sort by confidence, greedily keep anything not overlapping
        // an already-kept detection of the same class
        auto sorted = dets;
        std::sort(sorted.begin(), sorted.end(), [](const Detection& a, const Detection& b) {
            if (a.objectness != b.objectness) return a.objectness > b.objectness;
            return a.slot_index < b.slot_index;
        });
        std::vector<Detection> want;
        for (const auto& d : sorted) {
            bool keep = true;
            for (const auto& k : want)
                if (k.class_id == d.class_id && iou(k.box, d.box) > thr) keep = false;
            if (keep) want.push_back(d);
        }
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].slot_index == want[i].slot_index);
            CHECK(got[i].objectness == want[i].objectness);
        }

        // idempotent, and output is a subset of the input
        auto twice = nms(got, thr);
        CHECK(twice.size() == got.size());
        for (const auto& k : got)
            CHECK(std::any_of(dets.begin(), dets.end(),
                              [&](const Detection& d) { return d.slot_index == k.slot_index; }));
    }
}

TEST_CASE("nms keeps overlapping boxes of different classes") {
    Box b{0.5, 0.5, 0.4, 0.4};
    std::vector<Detection> dets = {make_det(0.9, 0, b, 0), make_det(0.8, 1, b, 1),
                                   make_det(0.7, 0, b, 2)};
    auto kept = nms(dets, 0.4);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].class_id == 0);
    CHECK(kept[1].class_id == 1);
}

TEST_CASE("attack losses match exhaustive slot enumeration") {
    Rng rng(22);
    const int S = 3, B = 2, C = 4, target = 1;
    for (int rep = 0; rep < 1000; ++rep) {
        auto raw = random_raw(S, B, C, rng);

        double best_cls = -1.0, best_obj = -1.0, best_oc = -1.0;
        for (int cy = 00; cy < S; ++cy)
            for (int cx = 0; cx < S; ++cx)
                for (int b = 0; b < B; ++b) {
                    const double o = slot_obj(raw, cy, cx, b);
                    const double p = slot_probs(raw, cy, cx, b)[target];
                    best_cls = std::max(best_cls, p);
                    best_obj = std::max(best_obj, o);
                    best_oc = std::max(best_oc, o * p);
                }

        CHECK(cls_loss(raw, target)->values[0] == best_cls);
        CHECK(obj_loss(raw)->values[0] == best_obj);
        CHECK(obj_cls_loss(raw, target)->values[0] == best_oc);
    }
}

TEST_CASE("attack losses reject out-of-range classes") {
    Rng rng(23);
    auto raw = random_raw(2, 1, 3, rng);
    CHECK_THROWS_AS(cls_loss(raw, 3), Error);
    CHECK_THROWS_AS(obj_cls_loss(raw, -1), Error);
}

TEST_CASE("forward produces one feature vector per grid slot") {
    DetectorConfig cfg;
    cfg.grid_size = 4;
    cfg.boxes_per_cell = 2;
    cfg.class_count = 3;
    cfg.input_size = 16;
    cfg.conv_widths = {4, 6};
    cfg.kernel_size = 3;
    auto det = Detector::random_init(cfg, 5);
    Rng rng(24);
    auto img = Tensor::random_uniform({3, 16, 16}, 0.0, 1.0, rng);
    auto raw = forward(det, img);
    CHECK(raw.S == 4);
    CHECK(raw.B == 2);
    CHECK(raw.C == 3);
    CHECK(raw.t->shape == std::vector<int>{4, 4, 2, 5 + 3});
    CHECK(decode(raw, 0.0).size() == 4 * 4 * 2);
    CHECK_THROWS_AS(forward(det, Tensor::leaf({3, 8, 8}, 0.0)), Error);
}

TEST_CASE("weights round-trip bit for bit") {
    DetectorConfig cfg;
    cfg.grid_size = 3;
    cfg.boxes_per_cell = 2;
    cfg.class_count = 5;
    cfg.input_size = 12;
    cfg.conv_widths = {4, 7};
    cfg.kernel_size = 3;
    cfg.detect_threshold = 0.45;
    cfg.nms_iou = 0.35;
    auto det = Detector::random_init(cfg, 99);
    const std::string path = temp_path("pf_roundtrip.pfdet");
    save_weights(det, path);
    auto back = load_weights(path);

    CHECK(back.config.grid_size == cfg.grid_size);
    CHECK(back.config.boxes_per_cell == cfg.boxes_per_cell);
    CHECK(back.config.class_count == cfg.class_count);
    CHECK(back.config.input_size == cfg.input_size);
    CHECK(back.config.conv_widths == cfg.conv_widths);
    CHECK(back.config.kernel_size == cfg.kernel_size);
    CHECK(back.config.detect_threshold == cfg.detect_threshold);
    CHECK(back.config.nms_iou == cfg.nms_iou);
    REQUIRE(back.layers.size() == det.layers.size());
    for (std::size_t i = 0; i < det.layers.size(); ++i) {
        CHECK(back.layers[i].kernel->values == det.layers[i].kernel->values);
        CHECK(back.layers[i].bias->values == det.layers[i].bias->values);
    }

    Rng rng(25);
    auto img = Tensor::random_uniform({3, 12, 12}, 0.0, 1.0, rng);
    CHECK(forward(back, img).t->values == forward(det, img).t->values);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_weights(path), Error);
}

TEST_CASE("training memorizes a tiny scene") {
    SceneSpec spec = SceneSpec::defaults();
    spec.image_size = 32;
    spec.frames_per_degree = 0.1;
    spec.pixel_noise = 0.0;
    auto frames = generate_dataset(spec, "train", 7);
    REQUIRE(frames.size() >= 4);
    auto labeled = to_labeled(frames);

    DetectorConfig cfg;
    cfg.grid_size = 4;
    cfg.boxes_per_cell = 2;
    cfg.class_count = spec.class_count;
    cfg.input_size = 32;
    cfg.conv_widths = {6, 12, 18};
    cfg.kernel_size = 3;
    auto det = Detector::random_init(cfg, 7);

    TrainOptions opt;
    opt.epochs = 60;
    opt.batch_size = 4;
    opt.seed = 7;
    opt.target_class = spec.target_class;
    opt.heldout_every = 5;
    opt.clean_threshold = 0.95;
    auto result = train_detector(det, labeled, opt);

    CHECK(result.epochs_run >= 1);
    CHECK(result.epochs_run <= opt.epochs);
    CHECK(result.epoch_losses.size() == static_cast<std::size_t>(result.epochs_run));
    CHECK(result.epoch_losses.front() > result.epoch_losses.back());
    CHECK(result.clean_rate >= 0.0);
    CHECK(result.clean_rate <= 1.0);
    const double rate = clean_detection_rate(det, labeled, spec.target_class, opt.min_iou);
    CHECK(rate >= 0.75);
    if (result.converged) CHECK(result.clean_rate >= opt.clean_threshold);
}

TEST_CASE("clean rate needs at least one target frame") {
    DetectorConfig cfg;
    cfg.grid_size = 2;
    cfg.boxes_per_cell = 1;
    cfg.class_count = 2;
    cfg.input_size = 8;
    cfg.conv_widths = {2, 2};
    cfg.kernel_size = 3;
    auto det = Detector::random_init(cfg, 1);
    LabeledImage frame;
    frame.image = Tensor::leaf({3, 8, 8}, 0.5);
    frame.class_id = 1;
    frame.box = Box{0.5, 0.5, 0.5, 0.5};
    CHECK_THROWS_AS(clean_detection_rate(det, {frame}, 0), Error);
    CHECK(clean_detection_rate(det, {frame}, 1) >= 0.0);
}
