#include "pf/placement.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "pf/image_io.hpp"

namespace pf {

Homography solve_homography(const std::array<Vec2, 4>& quad) {
    // unit square corners in TL,TR,BR,BL order
    const double su[4] = {0, 1, 1, 0};
    const double sv[4] = {0, 0, 1, 1};
    std::array<std::array<double, 9>, 8> rows{};
    for (int i = 0; i < 4; ++i) {
        const double u = su[i], v = sv[i], x = quad[i].x, y = quad[i].y;
        rows[2 * i] = {u, v, 1, 0, 0, 0, -u * x, -v * x, x};
        rows[2 * i + 1] = {0, 0, 0, u, v, 1, -u * y, -v * y, y};
    }
    std::array<double, 8> h{};
    try {
        h = solve_linear<8>(rows);
    } catch (const Error&) {
        throw Error("solve_homography: degenerate quad (collinear corners)");
    }
    Homography out;
    out.H.m = {h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0};
    if (std::abs(out.H.det()) < 1e-12) throw Error("solve_homography: degenerate quad");
    return out;
}

TransformParams draw_transform(const TransformRanges& r, const std::vector<int>& shape, Rng& rng) {
    if (r.brightness < 0 || r.noise < 0 || r.contrast_lo > r.contrast_hi)
        throw Error("draw_transform: invalid ranges");
    TransformParams p;
    p.brightness = rng.uniform(-r.brightness, r.brightness);
    p.contrast = rng.uniform(r.contrast_lo, r.contrast_hi);
    if (r.noise > 0)
        p.noise = Tensor::random_uniform(shape, -r.noise, r.noise, rng, false);
    return p;
}

TensorPtr apply_random_transform(const TensorPtr& patch, const TransformParams& params) {
    TensorPtr t = mul(patch, params.contrast);
    t = add(t, params.brightness);
    if (params.noise) {
        if (params.noise->shape != patch->shape)
            throw Error("apply_random_transform: noise shape mismatch");
        t = add(t, params.noise);
    }
    return clamp(t, 0.0, 1.0);
}

Patch init_patch(int slot_id, int size, std::uint64_t seed) {
    if (size < 2) throw Error("init_patch: size must be >= 2");
    Rng rng(mix_seed(seed, "patch-init", static_cast<std::uint64_t>(slot_id)));
    Patch p;
    p.slot_id = slot_id;
    p.pixels = Tensor::random_uniform({3, size, size}, 0.3, 0.7, rng, true);
    return p;
}

namespace {

struct Tap {
    std::size_t pix;           // destination pixel within a plane
    std::size_t src[4];        // patch sample offsets within a plane
    double w[4];
};

double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
}

} // namespace

TensorPtr composite_patch(const TensorPtr& frame_image, const TensorPtr& patch_pixels,
                          const Homography& hom) {
    if (frame_image->shape.size() != 3 || frame_image->shape[0] != 3)
        throw Error("composite_patch: frame must be [3,H,W]");
    if (patch_pixels->shape.size() != 3 || patch_pixels->shape[0] != 3)
        throw Error("composite_patch: patch must be [3,h,w]");

    const int H = frame_image->shape[1], W = frame_image->shape[2];
    const int ph = patch_pixels->shape[1], pw = patch_pixels->shape[2];

    std::array<Vec2, 4> quad;
    const Vec2 unit[4] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    for (int i = 0; i < 4; ++i) quad[i] = hom.H.apply(unit[i]);

    for (const auto& c : quad)
        if (c.x < 0 || c.x > W || c.y < 0 || c.y > H)
            throw Error("composite_patch: quad extends outside the image");

    // orientation and convexity from consecutive edge cross products
    double orient = 0;
    for (int i = 0; i < 4; ++i) {
        const Vec2 e0 = quad[(i + 1) % 4] - quad[i];
        const Vec2 e1 = quad[(i + 2) % 4] - quad[(i + 1) % 4];
        const double cr = cross(e0, e1);
        if (orient == 0) orient = cr;
        if (cr * orient < 0) throw Error("composite_patch: quad must be convex");
    }
    if (orient == 0) throw Error("composite_patch: degenerate quad");
    orient = orient > 0 ? 1.0 : -1.0;

    const Mat3 inv = hom.H.inverse();

    // integer bounding box of the quad limits the scan
    double qx0 = quad[0].x, qx1 = quad[0].x, qy0 = quad[0].y, qy1 = quad[0].y;
    for (const auto& c : quad) {
        qx0 = std::min(qx0, c.x);
        qx1 = std::max(qx1, c.x);
        qy0 = std::min(qy0, c.y);
        qy1 = std::max(qy1, c.y);
    }

    auto out = std::make_shared<Tensor>();
    out->shape = frame_image->shape;
    out->values = frame_image->values;
    out->grad.assign(out->values.size(), 0.0);
    out->needs_grad = frame_image->needs_grad || patch_pixels->needs_grad;
    out->parents = {frame_image, patch_pixels};

    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const std::size_t pplane = static_cast<std::size_t>(ph) * pw;
    auto taps = std::make_shared<std::vector<Tap>>();

    const int y_lo = std::max(0, static_cast<int>(std::floor(qy0 - 0.5)));
    const int y_hi = std::min(H - 1, static_cast<int>(std::ceil(qy1)));
    const int x_lo = std::max(0, static_cast<int>(std::floor(qx0 - 0.5)));
    const int x_hi = std::min(W - 1, static_cast<int>(std::ceil(qx1)));

    const double* pv = patch_pixels->values.data();
    for (int y = y_lo; y <= y_hi; ++y) {
        for (int x = x_lo; x <= x_hi; ++x) {
            const Vec2 p{x + 0.5, y + 0.5};
            bool inside = true;
            for (int i = 0; i < 4 && inside; ++i)
                if (cross(quad[(i + 1) % 4] - quad[i], p - quad[i]) * orient < 0) inside = false;
            if (!inside) continue;

            const Vec2 src = inv.apply(p);
            double px = snap(src.x * pw - 0.5);
            double py = snap(src.y * ph - 0.5);
            px = std::min(static_cast<double>(pw - 1), std::max(0.0, px)); // edge extend
            py = std::min(static_cast<double>(ph - 1), std::max(0.0, py));
            const int x0 = static_cast<int>(px), y0 = static_cast<int>(py);
            const int x1 = std::min(x0 + 1, pw - 1), y1 = std::min(y0 + 1, ph - 1);
            const double fx = px - x0, fy = py - y0;

            Tap t;
            t.pix = static_cast<std::size_t>(y) * W + x;
            t.src[0] = static_cast<std::size_t>(y0) * pw + x0;
            t.src[1] = static_cast<std::size_t>(y0) * pw + x1;
            t.src[2] = static_cast<std::size_t>(y1) * pw + x0;
            t.src[3] = static_cast<std::size_t>(y1) * pw + x1;
            t.w[0] = (1 - fx) * (1 - fy);
            t.w[1] = fx * (1 - fy);
            t.w[2] = (1 - fx) * fy;
            t.w[3] = fx * fy;

            for (int c = 0; c < 3; ++c) {
                const double* pp = pv + c * pplane;
                // lerp form keeps exact copies exact when fx or fy is 0
                const double top = pp[t.src[0]] + fx * (pp[t.src[1]] - pp[t.src[0]]);
                const double bot = pp[t.src[2]] + fx * (pp[t.src[3]] - pp[t.src[2]]);
                out->values[c * plane + t.pix] = top + fy * (bot - top);
            }
            taps->push_back(t);
        }
    }

    out->pull = [taps, plane, pplane](const Tensor& self) {
        Tensor& frame = *self.parents[0];
        Tensor& patch = *self.parents[1];
        if (frame.needs_grad) {
            // the whole frame passes through except replaced pixels
            std::vector<bool> replaced(plane, false);
            for (const auto& t : *taps) replaced[t.pix] = true;
            for (int c = 0; c < 3; ++c)
                for (std::size_t i = 0; i < plane; ++i)
                    if (!replaced[i]) frame.grad[c * plane + i] += self.grad[c * plane + i];
        }
        if (patch.needs_grad) {
            for (const auto& t : *taps)
                for (int c = 0; c < 3; ++c) {
                    const double g = self.grad[c * plane + t.pix];
                    if (g == 0.0) continue;
                    for (int k = 0; k < 4; ++k) patch.grad[c * pplane + t.src[k]] += g * t.w[k];
                }
        }
    };
    return out;
}

TensorPtr place_all(const Frame& frame, const std::vector<Patch>& patches,
                    const std::vector<TensorPtr>& transformed) {
    if (!transformed.empty() && transformed.size() != patches.size())
        throw Error("place_all: transformed tensors must align with patches");
    for (std::size_t i = 0; i < patches.size(); ++i)
        for (std::size_t j = i + 1; j < patches.size(); ++j)
            if (patches[i].slot_id == patches[j].slot_id)
                throw Error("place_all: duplicate patch for slot " +
                            std::to_string(patches[i].slot_id));

    TensorPtr img = frame.image;
    for (std::size_t i = 0; i < patches.size(); ++i) {
        const ScreenQuad* quad = nullptr;
        for (const auto& q : frame.quads)
            if (q.slot_id == patches[i].slot_id) {
                quad = &q;
                break;
            }
        if (!quad) continue; // slot not visible from this angle
        const TensorPtr& px = transformed.empty() ? patches[i].pixels : transformed[i];
        img = composite_patch(img, px, solve_homography(quad->corners));
    }
    return img;
}

// ---- persistence ----

void save_patch(const Patch& patch, const PatchMeta& meta, const std::string& prefix) {
    write_ppm(prefix + ".ppm", *patch.pixels);

    nlohmann::json j;
    j["slot"] = meta.slot_id;
    j["angle_subset"] = {meta.angle_lo, meta.angle_hi};
    j["loss_kind"] = meta.loss_kind;
    j["seed"] = meta.seed;
    j["iterations"] = meta.iterations;
    std::ofstream js(prefix + ".json");
    if (!js) throw Error("save_patch: cannot open " + prefix + ".json");
    js << j.dump(2) << "\n";

    std::ofstream bin(prefix + ".pfpatch", std::ios::binary);
    if (!bin) throw Error("save_patch: cannot open " + prefix + ".pfpatch");
    bin << "PFPATCH v1\n";
    bin << "shape 3 " << patch.pixels->shape[1] << " " << patch.pixels->shape[2] << "\n";
    write_doubles_le(bin, patch.pixels->values.data(), patch.pixels->size());
    if (!bin) throw Error("save_patch: write failed for " + prefix);
}

Patch load_patch(const std::string& prefix, PatchMeta* meta) {
    Patch p;
    std::ifstream bin(prefix + ".pfpatch", std::ios::binary);
    if (bin) {
        std::string line;
        if (!std::getline(bin, line) || line != "PFPATCH v1")
            throw Error("load_patch: bad magic in " + prefix + ".pfpatch");
        std::string tag;
        int c = 0, h = 0, w = 0;
        bin >> tag >> c >> h >> w;
        bin.get(); // trailing newline
        if (tag != "shape" || c != 3 || h < 1 || w < 1)
            throw Error("load_patch: bad shape line in " + prefix + ".pfpatch");
        p.pixels = Tensor::leaf({3, h, w}, 0.0, true);
        read_doubles_le(bin, p.pixels->values.data(), p.pixels->size());
    } else {
        p.pixels = read_ppm(prefix + ".ppm");
        p.pixels->needs_grad = true;
    }

    std::ifstream js(prefix + ".json");
    if (!js) throw Error("load_patch: missing " + prefix + ".json");
    nlohmann::json j;
    js >> j;
    p.slot_id = j.at("slot").get<int>();
    if (meta) {
        meta->slot_id = p.slot_id;
        meta->angle_lo = j.at("angle_subset")[0].get<double>();
        meta->angle_hi = j.at("angle_subset")[1].get<double>();
        meta->loss_kind = j.at("loss_kind").get<std::string>();
        meta->seed = j.at("seed").get<std::uint64_t>();
        meta->iterations = j.at("iterations").get<int>();
    }
    return p;
}

} // namespace pf
