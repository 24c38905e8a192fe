#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pf/tensor.hpp"

namespace pf {

struct DetectorConfig {
    int grid_size = 9;     // S: output cells per side
    int boxes_per_cell = 5;
    int class_count = 8;
    int input_size = 144;  // square RGB input
    std::vector<int> conv_widths = {8, 16, 32, 48}; // one stride-2 layer per entry
    int kernel_size = 5;   // odd; sets how far each output cell can see
    double detect_threshold = 0.5;
    double nms_iou = 0.4;

    int slot_fields() const { return 5 + class_count; }
    int head_channels() const { return boxes_per_cell * slot_fields(); }
    void validate() const;
};

// Axis-aligned box, all fields normalized to [0,1] image coordinates.
struct Box {
    double cx = 0, cy = 0, w = 0, h = 0;
};

double iou(const Box& a, const Box& b);

struct ConvLayer {
    TensorPtr kernel; // [Cout,Cin,kh,kw]
    TensorPtr bias;   // [Cout]
};

class Detector {
public:
    DetectorConfig config;
    std::vector<ConvLayer> layers; // hidden stride-2 layers, then the 1x1 head

    static Detector random_init(const DetectorConfig& cfg, std::uint64_t seed);
    static Detector zero_init(const DetectorConfig& cfg);

    std::vector<TensorPtr> parameters() const;
};

// Raw per-slot predictions, shape [S,S,B,5+C]:
// [tx, ty, tw, th, to, class logits...]
struct RawGridOutput {
    TensorPtr t;
    int S = 0, B = 0, C = 0;
};

RawGridOutput forward(const Detector& det, const TensorPtr& image);

struct Detection {
    Box box;
    double objectness = 0;
    std::vector<double> class_probs;
    int class_id = 0;
    int slot_index = 0; // flat (cy*S + cx)*B + b
};

std::vector<Detection> decode(const RawGridOutput& raw, double threshold);
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);
std::vector<Detection> detect(const Detector& det, const TensorPtr& image);

// any post-NMS detection of the given class / any of the given classes
bool detects_class(const Detector& det, const TensorPtr& image, int class_id);
bool detects_any(const Detector& det, const TensorPtr& image, const std::vector<int>& classes);

struct LabeledImage {
    TensorPtr image;
    int class_id = 0;
    Box box;
};

struct TrainOptions {
    int epochs = 30;
    double lr = 0.003;
    int batch_size = 8;
    double lambda_coord = 5.0;
    double lambda_noobj = 0.3;
    double lambda_cls = 1.0;
    double lambda_bg_cls = 0.05;
    std::uint64_t seed = 7;
    int target_class = 0;
    double clean_threshold = 0.95;
    double min_iou = 0.5;
    int heldout_every = 5; // every n-th frame goes to the held-out gate split
    bool stop_when_clean = true;
};

struct TrainResult {
    std::vector<double> epoch_losses;
    double clean_rate = 0;
    bool converged = false;
    int epochs_run = 0;
};

TrainResult train_detector(Detector& det, const std::vector<LabeledImage>& dataset,
                           const TrainOptions& opt);

// Fraction of target-class frames where some post-NMS detection matches the
// truth class with IoU >= min_iou.
double clean_detection_rate(const Detector& det, const std::vector<LabeledImage>& frames,
                            int target_class, double min_iou = 0.5);

// "PFDET v1": header line, config as text, then kernel/bias doubles per layer.
void save_weights(const Detector& det, const std::string& path);
Detector load_weights(const std::string& path);

} // namespace pf
