#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pf/detector.hpp"
#include "pf/geometry.hpp"
#include "pf/tensor.hpp"

namespace pf {

enum class Face { Back, Front, Left, Right, Top };

Face face_from_name(const std::string& name);
std::string face_name(Face f);

// Flat rectangle on a face of the target object's body box.
// off_u/off_v displace the screen center along the face's viewer-right /
// viewer-down axes; width/height are in object units.
struct ScreenSlot {
    int id = 0;
    Face face = Face::Back;
    double off_u = 0, off_v = 0;
    double width = 0.5, height = 0.4;
};

struct SceneSpec {
    int image_size = 144;
    int class_count = 8;
    int target_class = 0;
    std::vector<std::array<double, 3>> palette; // per-class base color
    std::vector<ScreenSlot> screens;
    double camera_distance = 6.0;
    double camera_height = 1.6;
    double focal_scale = 1.05; // focal length in pixels = focal_scale * image_size
    double angle_min = -45, angle_max = 45; // degrees, 0 = dead-on back view
    double frames_per_degree = 2.0;
    double angle_jitter = 0.8;      // fraction of the half-spacing between samples
    double brightness_jitter = 0.08;
    double background_jitter = 0.04;
    double screen_scale_jitter = 0.0;
    double pixel_noise = 0.02;      // stddev of per-pixel sensor noise
    double target_fraction = 0.5;   // share of frames showing the target object
    bool gradient_background = true;

    static SceneSpec defaults();
    void validate() const;
};

// Projected screen rectangle, image coordinates, TL/TR/BR/BL as seen on the
// screen surface.
struct ScreenQuad {
    int slot_id = 0;
    std::array<Vec2, 4> corners;
};

struct TruthBox {
    int class_id = 0;
    Box box;
};

struct Frame {
    TensorPtr image; // [3,H,W] in [0,1]
    double angle = 0;
    std::vector<ScreenQuad> quads;
    std::vector<TruthBox> truths;
};

struct FrameJitter {
    double brightness = 1.0;
    std::array<double, 3> bg_shift{0, 0, 0};
    double screen_scale = 1.0;
    std::uint64_t noise_seed = 0; // 0 = no sensor noise
};

struct Camera {
    Vec3 pos, right, up, fwd;
    double fx = 0, fy = 0, cx = 0, cy = 0;
};

Camera make_camera(const SceneSpec& spec, double angle_deg);
Vec2 project(const Camera& cam, Vec3 p);

// 3D corners (TL,TR,BR,BL) of a slot's rectangle, including the small lift
// off the face that the renderer uses.
std::array<Vec3, 4> screen_corners_3d(const SceneSpec& spec, const ScreenSlot& slot, double scale = 1.0);

// usable width/height of a body-box face of the target object
std::pair<double, double> face_extent(const SceneSpec& spec, Face face);

Frame render_frame(const SceneSpec& spec, double angle_deg, int class_id,
                   const FrameJitter& jitter = {});

std::vector<Frame> generate_dataset(const SceneSpec& spec, const std::string& split,
                                    std::uint64_t seed);

void save_dataset(const std::vector<Frame>& frames, const std::string& dir);
std::vector<Frame> load_dataset(const std::string& dir);

std::vector<LabeledImage> to_labeled(const std::vector<Frame>& frames);

} // namespace pf
