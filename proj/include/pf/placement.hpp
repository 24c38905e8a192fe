#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pf/geometry.hpp"
#include "pf/rng.hpp"
#include "pf/scenegen.hpp"
#include "pf/tensor.hpp"

namespace pf {

// Maps the unit square (0,0),(1,0),(1,1),(0,1) onto an image quad
// (TL,TR,BR,BL), normalized so H[2][2] = 1.
struct Homography {
    Mat3 H;
};

Homography solve_homography(const std::array<Vec2, 4>& quad);

struct TransformRanges {
    double brightness = 0.15;  // +- range
    double contrast_lo = 0.8, contrast_hi = 1.2;
    double noise = 0.05;       // +- per-pixel range
};

struct TransformParams {
    double brightness = 0.0;
    double contrast = 1.0;
    TensorPtr noise; // same shape as the patch; may be null for none
};

TransformParams draw_transform(const TransformRanges& r, const std::vector<int>& shape, Rng& rng);

// clamp(contrast * p + brightness + noise, 0, 1), differentiable in p
// wherever the clamp is inactive
TensorPtr apply_random_transform(const TensorPtr& patch, const TransformParams& params);

struct Patch {
    int slot_id = 0;
    TensorPtr pixels; // [3,h,w] in [0,1]
};

Patch init_patch(int slot_id, int size, std::uint64_t seed);

// Replaces every frame pixel whose center lies inside the quad (boundary
// included) with an inverse-warped bilinear sample of the patch; everything
// else is copied bit-exactly. Gradients flow to the patch only.
TensorPtr composite_patch(const TensorPtr& frame_image, const TensorPtr& patch_pixels,
                          const Homography& hom);

// Applies each patch to its slot's quad, skipping slots not visible in the
// frame. `transformed`, when non-empty, supplies the tensors to composite
// (parallel to `patches`).
TensorPtr place_all(const Frame& frame, const std::vector<Patch>& patches,
                    const std::vector<TensorPtr>& transformed = {});

struct PatchMeta {
    int slot_id = 0;
    double angle_lo = 0, angle_hi = 0;
    std::string loss_kind;
    std::uint64_t seed = 0;
    int iterations = 0;
};

// prefix.ppm (8-bit preview), prefix.json (metadata),
// prefix.pfpatch (exact doubles, "PFPATCH v1")
void save_patch(const Patch& patch, const PatchMeta& meta, const std::string& prefix);
Patch load_patch(const std::string& prefix, PatchMeta* meta = nullptr);

} // namespace pf
