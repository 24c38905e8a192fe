#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pf/attack.hpp"
#include "pf/detector.hpp"
#include "pf/placement.hpp"
#include "pf/scenegen.hpp"

namespace pf {

struct FrameRecord {
    double angle = 0;
    int bin = -1;  // plan evaluations only
    int hits = 0;  // surviving detections of the watched classes
    bool success = false;
};

struct EvalReport {
    std::string metric = "attack"; // attack | semantic | clean | transfer
    std::string loss_kind;
    std::vector<int> classes;    // watched class set
    double rate = 0;             // percent of successful frames
    std::vector<double> per_bin; // plan evaluations only
    std::vector<FrameRecord> frames;
};

// Percent of frames where, after compositing (no random transforms), no
// surviving detection carries the target class.
EvalReport attack_success_rate(const Detector& det, const std::vector<Frame>& frames,
                               const std::vector<Patch>& patches, int target_class);
EvalReport attack_success_rate(const Detector& det, const std::vector<Frame>& frames,
                               const SplitPlan& plan, int target_class);

// Success requires every class in the set to be absent.
EvalReport semantic_success_rate(const Detector& det, const std::vector<Frame>& frames,
                                 const std::vector<Patch>& patches,
                                 const std::vector<int>& classes);
EvalReport semantic_success_rate(const Detector& det, const std::vector<Frame>& frames,
                                 const SplitPlan& plan, const std::vector<int>& classes);

// attack_success_rate on the unmodified frames
EvalReport clean_baseline(const Detector& det, const std::vector<Frame>& frames, int target_class);

// Patches crafted elsewhere, measured against another detector.
EvalReport cross_model_eval(const Detector& other, const std::vector<Frame>& frames,
                            const std::vector<Patch>& patches, int target_class);
EvalReport cross_model_eval(const Detector& other, const std::vector<Frame>& frames,
                            const SplitPlan& plan, int target_class);

void save_report_json(const EvalReport& r, const std::string& path);
void save_report_csv(const EvalReport& r, const std::string& path);

struct HeatMap {
    int size = 0;              // cells per side
    std::vector<double> cells; // row-major size*size
    std::string kind;          // objectness-sum | class-argmax
};

// Per-cell sum of the B objectness sigmoids, so each cell lies in [0, B].
HeatMap objectness_heatmap(const Detector& det, const TensorPtr& image);
// Per-cell most probable class of the slot with the highest class
// probability; ties resolve to the lowest class id, then the lowest slot.
HeatMap class_map(const Detector& det, const TensorPtr& image);

double heatmap_total(const HeatMap& m);

// grid cells (row, col) whose centers fall inside the box
std::vector<std::pair<int, int>> cells_in_box(int grid_size, const Box& box);

void save_heatmap_csv(const HeatMap& m, const std::string& path);
// linear gray mapping [lo,hi] -> [0,255], one cell_pixels square per cell
void save_heatmap_ppm(const HeatMap& m, const std::string& path, double lo, double hi,
                      int cell_pixels = 16);

struct SweepPoint {
    double ratio = 0; // screen area / back-face area; 0 = no screen
    double rate = 0;  // percent
};

// Per ratio: regenerate train/test data with the back screen resized to the
// given area share, craft one obj_cls patch on the train split, report the
// test-split success rate. Ratio 0 skips crafting and reports the clean
// baseline. Ratios outside [0,1] or larger than the face holds are errors.
std::vector<SweepPoint> screen_size_sweep(const SceneSpec& spec, const std::vector<double>& ratios,
                                          const AttackConfig& cfg, const Detector& det);

void save_sweep_csv(const std::vector<SweepPoint>& points, const std::string& path);

} // namespace pf
