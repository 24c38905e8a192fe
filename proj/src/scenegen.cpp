#include "pf/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pf/image_io.hpp"

namespace fs = std::filesystem;

namespace pf {

Face face_from_name(const std::string& name) {
    if (name == "back") return Face::Back;
    if (name == "front") return Face::Front;
    if (name == "left") return Face::Left;
    if (name == "right") return Face::Right;
    if (name == "top") return Face::Top;
    throw Error("unknown face name: " + name);
}

std::string face_name(Face f) {
    switch (f) {
        case Face::Back: return "back";
        case Face::Front: return "front";
        case Face::Left: return "left";
        case Face::Right: return "right";
        case Face::Top: return "top";
    }
    throw Error("bad face enum");
}

SceneSpec SceneSpec::defaults() {
    SceneSpec s;
    s.palette = {
        {0.78, 0.10, 0.08}, // target: red sedan, plain gray panels
        {0.78, 0.10, 0.08}, // twin with blue panels
        {0.78, 0.10, 0.08}, // twin with green panels
        {0.88, 0.80, 0.12},
        {0.10, 0.68, 0.72},
        {0.85, 0.85, 0.85},
        {0.52, 0.22, 0.70},
        {0.95, 0.55, 0.10},
    };
    s.screens = {
        {0, Face::Back, 0.0, -0.25, 0.80, 0.50},
        {1, Face::Left, 0.0, -0.2, 1.10, 0.60},
    };
    return s;
}

void SceneSpec::validate() const {
    if (image_size < 8) throw Error("scene: image_size too small");
    if (class_count < 2) throw Error("scene: class_count must be >= 2");
    if (target_class < 0 || target_class >= class_count) throw Error("scene: target_class out of range");
    if (static_cast<int>(palette.size()) < class_count)
        throw Error("scene: palette must cover every class");
    if (!(angle_max > angle_min)) throw Error("scene: empty angle range");
    if (frames_per_degree <= 0) throw Error("scene: frames_per_degree must be positive");
    if (angle_jitter < 0 || angle_jitter > 1) throw Error("scene: angle_jitter must lie in [0,1]");
    if (camera_distance <= 0) throw Error("scene: camera_distance must be positive");
    if (pixel_noise < 0) throw Error("scene: pixel_noise must be >= 0");
    for (std::size_t i = 0; i < screens.size(); ++i)
        for (std::size_t j = i + 1; j < screens.size(); ++j)
            if (screens[i].id == screens[j].id) throw Error("scene: duplicate screen slot id");
}

// ---- object geometry ----

struct Box3 {
    Vec3 lo, hi;
};

static std::vector<Box3> class_boxes(int class_id) {
    switch (class_id % 8) {
        case 0: // two-box sedan: low body + cabin shifted to the front
        case 1: // sedan twins: same shape, told apart by panel livery color
        case 2:
            return {{{-0.9, 0.0, -2.0}, {0.9, 1.15, 2.0}},
                    {{-0.8, 1.15, -1.45}, {0.8, 1.9, 0.45}}};
        case 3: return {{{-0.75, 0.0, -0.75}, {0.75, 1.5, 0.75}}};
        case 4: return {{{-1.3, 0.0, -1.3}, {1.3, 0.5, 1.3}}};
        case 5: return {{{-0.4, 0.0, -0.4}, {0.4, 2.8, 0.4}}};
        case 6: return {{{-1.1, 0.0, -0.7}, {1.1, 1.0, 0.7}}};
        default: return {{{-0.5, 0.0, -1.2}, {0.5, 0.9, 1.2}}};
    }
}

struct FaceAxes {
    Vec3 center, normal, u, v; // u = viewer-right, v = viewer-down (outside view)
    double half_u = 0, half_v = 0;
};

static FaceAxes face_axes(const Box3& b, Face f) {
    const Vec3 mid = (b.lo + b.hi) * 0.5;
    const Vec3 half = (b.hi - b.lo) * 0.5;
    FaceAxes a;
    switch (f) {
        case Face::Back:
            a.center = {mid.x, mid.y, b.hi.z};
            a.normal = {0, 0, 1};
            a.u = {-1, 0, 0};
            a.v = {0, -1, 0};
            a.half_u = half.x;
            a.half_v = half.y;
            break;
        case Face::Front:
            a.center = {mid.x, mid.y, b.lo.z};
            a.normal = {0, 0, -1};
            a.u = {1, 0, 0};
            a.v = {0, -1, 0};
            a.half_u = half.x;
            a.half_v = half.y;
            break;
        case Face::Left:
            a.center = {b.hi.x, mid.y, mid.z};
            a.normal = {1, 0, 0};
            a.u = {0, 0, 1};
            a.v = {0, -1, 0};
            a.half_u = half.z;
            a.half_v = half.y;
            break;
        case Face::Right:
            a.center = {b.lo.x, mid.y, mid.z};
            a.normal = {-1, 0, 0};
            a.u = {0, 0, -1};
            a.v = {0, -1, 0};
            a.half_u = half.z;
            a.half_v = half.y;
            break;
        case Face::Top:
            a.center = {mid.x, b.hi.y, mid.z};
            a.normal = {0, 1, 0};
            a.u = {1, 0, 0};
            a.v = {0, 0, 1};
            a.half_u = half.x;
            a.half_v = half.z;
            break;
    }
    return a;
}

static constexpr double kScreenLift = 0.01;

std::pair<double, double> face_extent(const SceneSpec& spec, Face face) {
    const auto body = class_boxes(spec.target_class)[0];
    const auto a = face_axes(body, face);
    return {2 * a.half_u, 2 * a.half_v};
}

std::array<Vec3, 4> screen_corners_3d(const SceneSpec& spec, const ScreenSlot& slot, double scale) {
    const auto body = class_boxes(spec.target_class)[0];
    const auto a = face_axes(body, slot.face);
    const double hw = slot.width * scale * 0.5, hh = slot.height * scale * 0.5;
    if (std::abs(slot.off_u) + hw > a.half_u || std::abs(slot.off_v) + hh > a.half_v)
        throw Error("screen slot " + std::to_string(slot.id) + " does not fit on face " +
                    face_name(slot.face));
    const Vec3 c = a.center + a.u * slot.off_u + a.v * slot.off_v + a.normal * kScreenLift;
    return {c + a.u * (-hw) + a.v * (-hh), c + a.u * hw + a.v * (-hh), c + a.u * hw + a.v * hh,
            c + a.u * (-hw) + a.v * hh};
}

// ---- camera ----

Camera make_camera(const SceneSpec& spec, double angle_deg) {
    const double th = angle_deg * 3.14159265358979323846 / 180.0;
    Camera cam;
    cam.pos = {spec.camera_distance * std::sin(th), spec.camera_height,
               spec.camera_distance * std::cos(th)};
    const Vec3 look_at{0, 0.8, 0};
    cam.fwd = normalized(look_at - cam.pos);
    const Vec3 world_up{0, 1, 0};
    cam.right = normalized(cross(world_up, cam.fwd));
    cam.up = cross(cam.fwd, cam.right);
    cam.fx = cam.fy = spec.focal_scale * spec.image_size;
    cam.cx = spec.image_size / 2.0;
    cam.cy = spec.image_size / 2.0;
    return cam;
}

static Vec3 to_camera(const Camera& cam, Vec3 p) {
    const Vec3 d = p - cam.pos;
    return {dot(cam.right, d), dot(cam.up, d), dot(cam.fwd, d)};
}

Vec2 project(const Camera& cam, Vec3 p) {
    const Vec3 c = to_camera(cam, p);
    if (c.z < 0.1) throw Error("project: point behind or too close to camera");
    return {cam.cx + cam.fx * c.x / c.z, cam.cy - cam.fy * c.y / c.z};
}

// ---- rasterizer ----

namespace {

struct ShadedQuad {
    std::array<Vec3, 4> corners; // TL,TR,BR,BL outside view
    Vec3 normal;
    std::array<double, 3> color;
};

struct Raster {
    int size;
    std::vector<double> rgb;  // [3,H,W]
    std::vector<double> invz; // z-buffer, 1/z, larger wins

    explicit Raster(int n) : size(n), rgb(3ull * n * n, 0.0), invz(1ull * n * n, 0.0) {}
};

void raster_triangle(Raster& r, const Camera& cam, Vec3 a, Vec3 b, Vec3 c,
                     const std::array<double, 3>& color) {
    const Vec3 ca = to_camera(cam, a), cb = to_camera(cam, b), cc = to_camera(cam, c);
    if (ca.z < 0.1 || cb.z < 0.1 || cc.z < 0.1)
        throw Error("render: object intersects the camera plane");
    const Vec2 pa{cam.cx + cam.fx * ca.x / ca.z, cam.cy - cam.fy * ca.y / ca.z};
    const Vec2 pb{cam.cx + cam.fx * cb.x / cb.z, cam.cy - cam.fy * cb.y / cb.z};
    const Vec2 pc{cam.cx + cam.fx * cc.x / cc.z, cam.cy - cam.fy * cc.y / cc.z};

    const double area = cross(pb - pa, pc - pa);
    if (std::abs(area) < 1e-12) return;

    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({pa.x, pb.x, pc.x}))));
    const int x1 = std::min(r.size - 1, static_cast<int>(std::ceil(std::max({pa.x, pb.x, pc.x}))));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({pa.y, pb.y, pc.y}))));
    const int y1 = std::min(r.size - 1, static_cast<int>(std::ceil(std::max({pa.y, pb.y, pc.y}))));

    const std::size_t plane = static_cast<std::size_t>(r.size) * r.size;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const Vec2 p{x + 0.5, y + 0.5};
            const double l0 = cross(pb - p, pc - p) / area;
            const double l1 = cross(pc - p, pa - p) / area;
            const double l2 = cross(pa - p, pb - p) / area;
            if (l0 < 0 || l1 < 0 || l2 < 0) continue;
            const double iz = l0 / ca.z + l1 / cb.z + l2 / cc.z;
            const std::size_t pix = static_cast<std::size_t>(y) * r.size + x;
            if (iz > r.invz[pix]) {
                r.invz[pix] = iz;
                for (int ch = 0; ch < 3; ++ch) r.rgb[ch * plane + pix] = color[ch];
            }
        }
    }
}

} // namespace

static constexpr double kVisibilityMargin = 0.15;

Frame render_frame(const SceneSpec& spec, double angle_deg, int class_id,
                   const FrameJitter& jitter) {
    spec.validate();
    if (class_id < 0 || class_id >= spec.class_count)
        throw Error("render_frame: class_id out of range");

    const Camera cam = make_camera(spec, angle_deg);
    const int n = spec.image_size;
    Raster raster(n);

    // background: flat color with optional vertical gradient and per-frame shift
    const std::array<double, 3> bg_base{0.82, 0.84, 0.88};
    const std::size_t plane = static_cast<std::size_t>(n) * n;
    for (int y = 0; y < n; ++y) {
        const double m = spec.gradient_background ? 1.06 - 0.18 * (static_cast<double>(y) / n) : 1.0;
        for (int x = 0; x < n; ++x)
            for (int c = 0; c < 3; ++c)
                raster.rgb[c * plane + static_cast<std::size_t>(y) * n + x] =
                    bg_base[c] * m + jitter.bg_shift[c];
    }

    // object faces, flat shaded by a fixed directional light; cabins (second box
    // of two-box classes) get a shared glass tone so the body hue carries the class
    const Vec3 light = normalized({0.4, 0.85, 0.5});
    const std::array<double, 3> glass = {0.16, 0.17, 0.21};
    std::vector<ShadedQuad> quads3;
    const auto boxes = class_boxes(class_id);
    for (std::size_t bi = 0; bi < boxes.size(); ++bi) {
        const std::array<double, 3>& base_color = bi == 0 ? spec.palette[class_id] : glass;
        for (Face f : {Face::Back, Face::Front, Face::Left, Face::Right, Face::Top}) {
            const auto a = face_axes(boxes[bi], f);
            ShadedQuad q;
            q.normal = a.normal;
            q.corners = {a.center + a.u * (-a.half_u) + a.v * (-a.half_v),
                         a.center + a.u * a.half_u + a.v * (-a.half_v),
                         a.center + a.u * a.half_u + a.v * a.half_v,
                         a.center + a.u * (-a.half_u) + a.v * a.half_v};
            const double shade = 0.6 + 0.4 * std::max(0.0, dot(a.normal, light));
            for (int c = 0; c < 3; ++c) q.color[c] = base_color[c] * shade;
            quads3.push_back(q);
        }
    }

    // panel quads: idle gray on the target, class-colored livery on the twins,
    // so the panel content alone separates the look-alike classes
    const bool is_target = class_id == spec.target_class;
    const bool is_twin = !is_target && class_id < 3 && spec.target_class < 3;
    if (is_target || is_twin) {
        const std::array<double, 3> livery =
            class_id == 1 ? std::array<double, 3>{0.10, 0.25, 0.80}
                          : std::array<double, 3>{0.12, 0.62, 0.18};
        for (const auto& slot : spec.screens) {
            ShadedQuad q;
            q.corners = screen_corners_3d(spec, slot, jitter.screen_scale);
            q.normal = face_axes(boxes[0], slot.face).normal;
            q.color = is_target ? std::array<double, 3>{0.5, 0.5, 0.5} : livery;
            quads3.push_back(q);
        }
    }

    for (const auto& q : quads3) {
        // backface cull against the actual view direction
        if (dot(q.normal, cam.pos - q.corners[0]) <= 0) continue;
        raster_triangle(raster, cam, q.corners[0], q.corners[1], q.corners[2], q.color);
        raster_triangle(raster, cam, q.corners[0], q.corners[2], q.corners[3], q.color);
    }

    Frame frame;
    frame.angle = angle_deg;

    if (is_target) {
        for (const auto& slot : spec.screens) {
            const auto c3 = screen_corners_3d(spec, slot, jitter.screen_scale);
            const auto a = face_axes(boxes[0], slot.face);
            const Vec3 mid = (c3[0] + c3[2]) * 0.5;
            const Vec3 to_cam = normalized(cam.pos - mid);
            if (dot(a.normal, to_cam) <= kVisibilityMargin) continue;
            ScreenQuad q;
            q.slot_id = slot.id;
            bool in_bounds = true;
            for (int i = 0; i < 4; ++i) {
                q.corners[i] = project(cam, c3[i]);
                if (q.corners[i].x < 0 || q.corners[i].x > n || q.corners[i].y < 0 ||
                    q.corners[i].y > n)
                    in_bounds = false;
            }
            if (in_bounds) frame.quads.push_back(q);
        }
    }

    // truth box: projected bounding rectangle of every object corner
    double bx0 = 1e30, bx1 = -1e30, by0 = 1e30, by1 = -1e30;
    for (const auto& b : boxes) {
        for (int i = 0; i < 8; ++i) {
            const Vec3 corner{i & 1 ? b.hi.x : b.lo.x, i & 2 ? b.hi.y : b.lo.y,
                              i & 4 ? b.hi.z : b.lo.z};
            const Vec2 p = project(cam, corner);
            bx0 = std::min(bx0, p.x);
            bx1 = std::max(bx1, p.x);
            by0 = std::min(by0, p.y);
            by1 = std::max(by1, p.y);
        }
    }
    bx0 = std::max(0.0, bx0);
    by0 = std::max(0.0, by0);
    bx1 = std::min(static_cast<double>(n), bx1);
    by1 = std::min(static_cast<double>(n), by1);
    TruthBox truth;
    truth.class_id = class_id;
    truth.box = {(bx0 + bx1) / 2 / n, (by0 + by1) / 2 / n, (bx1 - bx0) / n, (by1 - by0) / n};
    frame.truths.push_back(truth);

    for (double& v : raster.rgb) v *= jitter.brightness;
    if (spec.pixel_noise > 0 && jitter.noise_seed != 0) {
        Rng noise(jitter.noise_seed);
        for (double& v : raster.rgb) v += spec.pixel_noise * noise.normal();
    }
    for (double& v : raster.rgb) v = std::min(1.0, std::max(0.0, v));
    frame.image = Tensor::leaf({3, n, n}, std::move(raster.rgb), false);
    return frame;
}

std::vector<Frame> generate_dataset(const SceneSpec& spec, const std::string& split,
                                    std::uint64_t seed) {
    spec.validate();
    const long count = std::lround((spec.angle_max - spec.angle_min) * spec.frames_per_degree);
    if (count < 1) throw Error("generate_dataset: angle range and density yield no frames");
    const double spacing = (spec.angle_max - spec.angle_min) / static_cast<double>(count);

    std::vector<Frame> frames;
    frames.reserve(static_cast<std::size_t>(count));
    for (long i = 0; i < count; ++i) {
        Rng rng(mix_seed(seed, "frame-" + split, static_cast<std::uint64_t>(i)));
        const double angle = spec.angle_min + (i + 0.5) * spacing +
                             (rng.uniform() - 0.5) * spacing * spec.angle_jitter;

        int class_id = spec.target_class;
        if (rng.uniform() >= spec.target_fraction && spec.class_count > 1) {
            int pick = rng.uniform_int(0, spec.class_count - 2);
            class_id = pick >= spec.target_class ? pick + 1 : pick;
        }

        FrameJitter jit;
        jit.brightness = 1.0 + (rng.uniform() - 0.5) * 2.0 * spec.brightness_jitter;
        for (int c = 0; c < 3; ++c)
            jit.bg_shift[c] = (rng.uniform() - 0.5) * 2.0 * spec.background_jitter;
        jit.screen_scale = 1.0 + (rng.uniform() - 0.5) * 2.0 * spec.screen_scale_jitter;
        jit.noise_seed = mix_seed(seed, "frame-noise-" + split, static_cast<std::uint64_t>(i));

        frames.push_back(render_frame(spec, angle, class_id, jit));
    }
    return frames;
}

// ---- dataset persistence ----

static std::string frame_stem(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%04zu", i);
    return buf;
}

static std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

void save_dataset(const std::vector<Frame>& frames, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream index(fs::path(dir) / "index.txt");
    if (!index) throw Error("save_dataset: cannot write index in " + dir);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const auto& f = frames[i];
        const std::string stem = frame_stem(i);
        write_ppm((fs::path(dir) / (stem + ".ppm")).string(), *f.image);
        std::ofstream side(fs::path(dir) / (stem + ".txt"));
        side << "angle " << fmt_g(f.angle) << "\n";
        for (const auto& q : f.quads) {
            side << "screen " << q.slot_id;
            for (const auto& c : q.corners) side << " " << fmt_g(c.x) << " " << fmt_g(c.y);
            side << "\n";
        }
        for (const auto& t : f.truths)
            side << "truth " << t.class_id << " " << fmt_g(t.box.cx) << " " << fmt_g(t.box.cy)
                 << " " << fmt_g(t.box.w) << " " << fmt_g(t.box.h) << "\n";
        if (!side) throw Error("save_dataset: write failed for " + stem);
        index << stem << " " << fmt_g(f.angle) << "\n";
    }
}

// corner annotation fallback: exactly four pure-magenta pixels mark one quad
static std::vector<ScreenQuad> quads_from_sentinels(const RawPpm& raw) {
    std::vector<Vec2> pts;
    for (int y = 0; y < raw.height; ++y)
        for (int x = 0; x < raw.width; ++x) {
            const std::size_t i = (static_cast<std::size_t>(y) * raw.width + x) * 3;
            if (raw.rgb[i] == 255 && raw.rgb[i + 1] == 0 && raw.rgb[i + 2] == 255)
                pts.push_back({x + 0.5, y + 0.5});
        }
    if (pts.empty()) return {};
    if (pts.size() != 4)
        throw Error("sentinel corners: expected exactly 4 magenta pixels, found " +
                    std::to_string(pts.size()));
    auto by = [&](auto f) { return *std::max_element(pts.begin(), pts.end(), f); };
    ScreenQuad q;
    q.slot_id = 0;
    q.corners[0] = by([](Vec2 a, Vec2 b) { return a.x + a.y > b.x + b.y; });  // TL: min x+y
    q.corners[1] = by([](Vec2 a, Vec2 b) { return a.x - a.y < b.x - b.y; });  // TR: max x-y
    q.corners[2] = by([](Vec2 a, Vec2 b) { return a.x + a.y < b.x + b.y; });  // BR: max x+y
    q.corners[3] = by([](Vec2 a, Vec2 b) { return a.x - a.y > b.x - b.y; });  // BL: min x-y
    return {q};
}

std::vector<Frame> load_dataset(const std::string& dir) {
    std::ifstream index(fs::path(dir) / "index.txt");
    if (!index) throw Error("load_dataset: missing index.txt in " + dir);
    std::vector<Frame> frames;
    std::string stem;
    double ang;
    while (index >> stem >> ang) {
        Frame f;
        const std::string ppm_path = (fs::path(dir) / (stem + ".ppm")).string();
        f.image = read_ppm(ppm_path);
        f.angle = ang;

        std::ifstream side(fs::path(dir) / (stem + ".txt"));
        if (!side) throw Error("load_dataset: missing sidecar for " + stem);
        std::string line;
        bool any_screen_line = false;
        while (std::getline(side, line)) {
            std::istringstream ls(line);
            std::string key;
            ls >> key;
            if (key == "angle") {
                ls >> f.angle;
            } else if (key == "screen") {
                any_screen_line = true;
                ScreenQuad q;
                ls >> q.slot_id;
                for (auto& c : q.corners) ls >> c.x >> c.y;
                if (!ls) throw Error("load_dataset: malformed screen line in " + stem);
                f.quads.push_back(q);
            } else if (key == "truth") {
                TruthBox t;
                ls >> t.class_id >> t.box.cx >> t.box.cy >> t.box.w >> t.box.h;
                if (!ls) throw Error("load_dataset: malformed truth line in " + stem);
                f.truths.push_back(t);
            } else if (!key.empty()) {
                throw Error("load_dataset: unknown sidecar key '" + key + "' in " + stem);
            }
        }
        if (!any_screen_line) {
            auto qs = quads_from_sentinels(read_ppm_bytes(ppm_path));
            f.quads.insert(f.quads.end(), qs.begin(), qs.end());
        }
        frames.push_back(std::move(f));
    }
    if (frames.empty()) throw Error("load_dataset: no frames listed in " + dir);
    return frames;
}

std::vector<LabeledImage> to_labeled(const std::vector<Frame>& frames) {
    std::vector<LabeledImage> out;
    out.reserve(frames.size());
    for (const auto& f : frames) {
        if (f.truths.size() != 1) throw Error("to_labeled: frame must carry exactly one truth box");
        out.push_back({f.image, f.truths[0].class_id, f.truths[0].box});
    }
    return out;
}

} // namespace pf
