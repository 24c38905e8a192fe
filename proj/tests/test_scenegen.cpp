#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pf/scenegen.hpp"

using namespace pf;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("face names round-trip") {
    for (Face f : {Face::Front, Face::Back, Face::Left, Face::Right, Face::Top}) {
        CHECK(face_from_name(face_name(f)) == f);
    }
    CHECK_THROWS_AS(face_from_name("bottom"), Error);
}

TEST_CASE("spec validation rejects broken setups") {
    CHECK_NOTHROW(SceneSpec::defaults().validate());

    auto bad = SceneSpec::defaults();
    bad.palette.resize(3);
    CHECK_THROWS_AS(bad.validate(), Error);

    bad = SceneSpec::defaults();
    bad.screens.push_back(bad.screens[0]);
    CHECK_THROWS_AS(bad.validate(), Error);

    bad = SceneSpec::defaults();
    bad.frames_per_degree = 0.0;
    CHECK_THROWS_AS(bad.validate(), Error);

    bad = SceneSpec::defaults();
    bad.angle_min = 10.0;
    bad.angle_max = 10.0;
    CHECK_THROWS_AS(bad.validate(), Error);

    bad = SceneSpec::defaults();
    bad.target_class = bad.class_count;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("oversized screens report the face they fail on") {
    auto spec = SceneSpec::defaults();
    spec.screens[0].width = 50.0;
    try {
        screen_corners_3d(spec, spec.screens[0]);
        FAIL("expected a fit error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("back") != std::string::npos);
    }
    auto [fw, fh] = face_extent(spec, Face::Back);
    CHECK(fw > 0.0);
    CHECK(fh > 0.0);
    spec.screens[0].width = fw * 0.9;
    spec.screens[0].off_u = 0.0;
    spec.screens[0].off_v = 0.0;
    spec.screens[0].height = fh * 0.9;
    CHECK_NOTHROW(screen_corners_3d(spec, spec.screens[0]));
}

TEST_CASE("rendered screen quads agree with projected 3d corners") {
    auto spec = SceneSpec::defaults();
    spec.image_size = 64;
    spec.pixel_noise = 0.0;
    Frame f = render_frame(spec, 25.0, spec.target_class);
    REQUIRE(!f.quads.empty());
    Camera cam = make_camera(spec, 25.0);
    for (const auto& q : f.quads) {
        const ScreenSlot* slot = nullptr;
        for (const auto& s : spec.screens)
            if (s.id == q.slot_id) slot = &s;
        REQUIRE(slot != nullptr);
        auto c3 = screen_corners_3d(spec, *slot);
        for (int i = 0; i < 4; ++i) {
            Vec2 p = project(cam, c3[static_cast<std::size_t>(i)]);
            CHECK(p.x == doctest::Approx(q.corners[static_cast<std::size_t>(i)].x).epsilon(1e-9));
            CHECK(p.y == doctest::Approx(q.corners[static_cast<std::size_t>(i)].y).epsilon(1e-9));
        }
    }
}

TEST_CASE("frames carry one truth box that brackets the object") {
    auto spec = SceneSpec::defaults();
    spec.image_size = 64;
    for (double angle : {-40.0, -10.0, 0.0, 15.0, 44.0}) {
        Frame f = render_frame(spec, angle, spec.target_class);
        CHECK(f.image->shape == std::vector<int>{3, 64, 64});
        for (double v : f.image->values) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        REQUIRE(f.truths.size() == 1);
        const Box& b = f.truths[0].box;
        CHECK(f.truths[0].class_id == spec.target_class);
        CHECK(b.w > 0.05);
        CHECK(b.h > 0.05);
        CHECK(b.cx - b.w / 2 >= -1e-9);
        CHECK(b.cx + b.w / 2 <= 1.0 + 1e-9);
        // every screen quad lies inside the truth box region in pixels
        for (const auto& q : f.quads)
            for (const auto& c : q.corners) {
                CHECK(c.x / 64.0 >= b.cx - b.w / 2 - 0.02);
                CHECK(c.x / 64.0 <= b.cx + b.w / 2 + 0.02);
            }
    }
}

TEST_CASE("screen annotations exist only on target frames") {
    auto spec = SceneSpec::defaults();
    spec.image_size = 48;
    Frame target = render_frame(spec, 20.0, spec.target_class);
    Frame other = render_frame(spec, 20.0, 4);
    CHECK(!target.quads.empty());
    CHECK(other.quads.empty());
    CHECK(other.truths[0].class_id == 4);
}

TEST_CASE("dataset generation is deterministic per seed and split") {
    auto spec = SceneSpec::defaults();
    spec.image_size = 32;
    spec.frames_per_degree = 0.2;
    auto a = generate_dataset(spec, "train", 11);
    auto b = generate_dataset(spec, "train", 11);
    auto other_split = generate_dataset(spec, "test", 11);
    auto other_seed = generate_dataset(spec, "train", 12);

    REQUIRE(a.size() == b.size());
    CHECK(a.size() >= 10);
    bool all_equal = true;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].angle != b[i].angle) all_equal = false;
        if (a[i].image->values != b[i].image->values) all_equal = false;
    }
    CHECK(all_equal);

    auto differs = [&](const std::vector<Frame>& other) {
        if (other.size() != a.size()) return true;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i].image->values != other[i].image->values) return true;
        return false;
    };
    CHECK(differs(other_split));
    CHECK(differs(other_seed));

    int targets = 0;
    for (const auto& f : a) {
        CHECK(f.angle >= spec.angle_min - 1.0);
        CHECK(f.angle <= spec.angle_max + 1.0);
        if (f.truths[0].class_id == spec.target_class) ++targets;
    }
    // half the frames show the target, give or take sampling noise
    CHECK(targets >= static_cast<int>(a.size()) / 4);
    CHECK(targets <= 3 * static_cast<int>(a.size()) / 4);

    // denser sampling yields proportionally more frames
    spec.frames_per_degree = 0.4;
    CHECK(generate_dataset(spec, "train", 11).size() > a.size());
}

TEST_CASE("dataset persistence round-trips annotations") {
    auto spec = SceneSpec::defaults();
    spec.image_size = 32;
    spec.frames_per_degree = 0.1;
    auto frames = generate_dataset(spec, "train", 5);
    auto dir = temp_dir("pf_ds_rt");
    save_dataset(frames, dir.string());
    auto back = load_dataset(dir.string());

    REQUIRE(back.size() == frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        CHECK(back[i].angle == doctest::Approx(frames[i].angle).epsilon(1e-9));
        REQUIRE(back[i].truths.size() == frames[i].truths.size());
        CHECK(back[i].truths[0].class_id == frames[i].truths[0].class_id);
        CHECK(back[i].truths[0].box.cx == doctest::Approx(frames[i].truths[0].box.cx).epsilon(1e-9));
        REQUIRE(back[i].quads.size() == frames[i].quads.size());
        for (std::size_t qi = 0; qi < frames[i].quads.size(); ++qi) {
            CHECK(back[i].quads[qi].slot_id == frames[i].quads[qi].slot_id);
            for (int c = 0; c < 4; ++c) {
                CHECK(back[i].quads[qi].corners[static_cast<std::size_t>(c)].x ==
                      doctest::Approx(frames[i].quads[qi].corners[static_cast<std::size_t>(c)].x)
                          .epsilon(1e-9));
            }
        }
        // PPM quantizes to 8 bits
        REQUIRE(back[i].image->size() == frames[i].image->size());
        for (std::size_t px = 0; px < frames[i].image->size(); px += 37)
            CHECK(std::abs(back[i].image->values[px] - frames[i].image->values[px]) <=
                  0.5 / 255.0 + 1e-9);
    }

    fs::remove_all(dir);
    CHECK_THROWS_AS(load_dataset(dir.string()), Error);
}

TEST_CASE("loader recovers a quad from magenta corner sentinels") {
    auto dir = temp_dir("pf_sentinel");
    const int N = 16;
    std::ofstream ppm(dir / "frame_000000.ppm", std::ios::binary);
    ppm << "P6\n" << N << " " << N << "\n255\n";
    std::vector<unsigned char> rgb(static_cast<std::size_t>(N) * N * 3, 40);
    auto mark = [&](int x, int y) {
        const std::size_t i = (static_cast<std::size_t>(y) * N + x) * 3;
        rgb[i] = 255;
        rgb[i + 1] = 0;
        rgb[i + 2] = 255;
    };
    mark(3, 4);   // TL
    mark(12, 3);  // TR
    mark(13, 11); // BR
    mark(2, 12);  // BL
    ppm.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    ppm.close();
    std::ofstream side(dir / "frame_000000.txt");
    side << "angle 5\n" << "truth 0 0.5 0.5 0.6 0.6\n";
    side.close();
    std::ofstream index(dir / "index.txt");
    index << "frame_000000 5\n";
    index.close();

    auto frames = load_dataset(dir.string());
    REQUIRE(frames.size() == 1);
    REQUIRE(frames[0].quads.size() == 1);
    const auto& q = frames[0].quads[0];
    CHECK(q.slot_id == 0);
    CHECK(q.corners[0].x == doctest::Approx(3.5));
    CHECK(q.corners[0].y == doctest::Approx(4.5));
    CHECK(q.corners[1].x == doctest::Approx(12.5));
    CHECK(q.corners[2].x == doctest::Approx(13.5));
    CHECK(q.corners[2].y == doctest::Approx(11.5));
    CHECK(q.corners[3].x == doctest::Approx(2.5));

    // five sentinels are ambiguous
    mark(8, 8);
    std::ofstream again(dir / "frame_000000.ppm", std::ios::binary);
    again << "P6\n" << N << " " << N << "\n255\n";
    again.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    again.close();
    CHECK_THROWS_AS(load_dataset(dir.string()), Error);
    fs::remove_all(dir);
}

TEST_CASE("to_labeled requires exactly one truth per frame") {
    auto spec = SceneSpec::defaults();
    spec.image_size = 32;
    Frame f = render_frame(spec, 0.0, spec.target_class);
    auto labeled = to_labeled({f});
    REQUIRE(labeled.size() == 1);
    CHECK(labeled[0].class_id == spec.target_class);

    Frame broken = f;
    broken.truths.push_back(f.truths[0]);
    CHECK_THROWS_AS(to_labeled({broken}), Error);
    broken.truths.clear();
    CHECK_THROWS_AS(to_labeled({broken}), Error);
}
