#include "pf/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pf/image_io.hpp"
#include "pf/optim.hpp"

namespace pf {

void DetectorConfig::validate() const {
    if (grid_size < 1) throw Error("detector config: grid_size must be >= 1");
    if (boxes_per_cell < 1) throw Error("detector config: boxes_per_cell must be >= 1");
    if (class_count < 2) throw Error("detector config: class_count must be >= 2");
    if (conv_widths.empty()) throw Error("detector config: conv_widths must not be empty");
    for (int w : conv_widths)
        if (w < 1) throw Error("detector config: conv widths must be positive");
    if (kernel_size < 1 || kernel_size % 2 == 0)
        throw Error("detector config: kernel_size must be odd and positive");
    int expected = grid_size;
    for (std::size_t i = 0; i < conv_widths.size(); ++i) expected *= 2;
    if (expected != input_size)
        throw Error("detector config: input_size must equal grid_size * 2^len(conv_widths)");
    if (!(detect_threshold > 0.0 && detect_threshold < 1.0))
        throw Error("detector config: detect_threshold must lie in (0,1)");
    if (!(nms_iou >= 0.0 && nms_iou <= 1.0))
        throw Error("detector config: nms_iou must lie in [0,1]");
}

double iou(const Box& a, const Box& b) {
    const double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2;
    const double ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
    const double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2;
    const double by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
    const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
    const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
    const double inter = iw * ih;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni <= 0.0 ? 0.0 : inter / uni;
}

static Detector build(const DetectorConfig& cfg, bool randomize, std::uint64_t seed) {
    cfg.validate();
    Detector d;
    d.config = cfg;
    Rng rng(mix_seed(seed, "detector-init"));
    int cin = 3;
    auto make_layer = [&](int cout, int k) {
        ConvLayer layer;
        if (randomize) {
            const double limit = std::sqrt(2.0 / (cin * k * k));
            layer.kernel = Tensor::random_uniform({cout, cin, k, k}, -limit, limit, rng, true);
        } else {
            layer.kernel = Tensor::leaf({cout, cin, k, k}, 0.0, true);
        }
        layer.bias = Tensor::leaf({cout}, 0.0, true);
        d.layers.push_back(layer);
        cin = cout;
    };
    for (int w : cfg.conv_widths) make_layer(w, cfg.kernel_size);
    make_layer(cfg.head_channels(), 1);
    return d;
}

Detector Detector::random_init(const DetectorConfig& cfg, std::uint64_t seed) {
    return build(cfg, true, seed);
}

Detector Detector::zero_init(const DetectorConfig& cfg) { return build(cfg, false, 0); }

std::vector<TensorPtr> Detector::parameters() const {
    std::vector<TensorPtr> ps;
    for (const auto& l : layers) {
        ps.push_back(l.kernel);
        ps.push_back(l.bias);
    }
    return ps;
}

RawGridOutput forward(const Detector& det, const TensorPtr& image) {
    const auto& cfg = det.config;
    if (image->shape.size() != 3 || image->shape[0] != 3 || image->shape[1] != cfg.input_size ||
        image->shape[2] != cfg.input_size)
        throw Error("forward: image must be [3," + std::to_string(cfg.input_size) + "," +
                    std::to_string(cfg.input_size) + "]");

    TensorPtr t = image;
    const std::size_t hidden = det.layers.size() - 1;
    const int pad = cfg.kernel_size / 2;
    for (std::size_t i = 0; i < hidden; ++i)
        t = leaky_relu(channel_bias(conv2d(t, det.layers[i].kernel, 2, pad), det.layers[i].bias));
    t = channel_bias(conv2d(t, det.layers.back().kernel, 1, 0), det.layers.back().bias);

    const int S = cfg.grid_size, B = cfg.boxes_per_cell, F = cfg.slot_fields();
    t = reshape(t, {B, F, S, S});
    t = permute(t, {2, 3, 0, 1}); // -> [S,S,B,F]
    return RawGridOutput{t, S, B, cfg.class_count};
}

static double sigmoid_val(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<Detection> decode(const RawGridOutput& raw, double threshold) {
    const int S = raw.S, B = raw.B, C = raw.C, F = 5 + C;
    std::vector<Detection> out;
    const auto& v = raw.t->values;
    for (int cy = 0; cy < S; ++cy) {
        for (int cx = 0; cx < S; ++cx) {
            for (int b = 0; b < B; ++b) {
                const std::size_t base = ((static_cast<std::size_t>(cy) * S + cx) * B + b) * F;
                const double obj = sigmoid_val(v[base + 4]);
                if (obj < threshold) continue;
                Detection d;
                d.objectness = obj;
                d.box.cx = (cx + sigmoid_val(v[base + 0])) / S;
                d.box.cy = (cy + sigmoid_val(v[base + 1])) / S;
                d.box.w = sigmoid_val(v[base + 2]);
                d.box.h = sigmoid_val(v[base + 3]);
                d.slot_index = (cy * S + cx) * B + b;
                // same max-subtracted softmax as the graph op
                double m = v[base + 5];
                for (int c = 1; c < C; ++c) m = std::max(m, v[base + 5 + c]);
                double sum = 0.0;
                d.class_probs.resize(C);
                for (int c = 0; c < C; ++c) {
                    d.class_probs[c] = std::exp(v[base + 5 + c] - m);
                    sum += d.class_probs[c];
                }
                int best = 0;
                for (int c = 0; c < C; ++c) {
                    d.class_probs[c] /= sum;
                    if (d.class_probs[c] > d.class_probs[best]) best = c;
                }
                d.class_id = best;
                out.push_back(std::move(d));
            }
        }
    }
    return out;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
    std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.objectness != b.objectness) return a.objectness > b.objectness;
        return a.slot_index < b.slot_index;
    });
    std::vector<Detection> kept;
    for (auto& d : dets) {
        bool keep = true;
        for (const auto& k : kept) {
            if (k.class_id != d.class_id) continue;
            if (iou(k.box, d.box) > iou_threshold) {
                keep = false;
                break;
            }
        }
        if (keep) kept.push_back(std::move(d));
    }
    return kept;
}

std::vector<Detection> detect(const Detector& det, const TensorPtr& image) {
    return nms(decode(forward(det, image), det.config.detect_threshold), det.config.nms_iou);
}

bool detects_class(const Detector& det, const TensorPtr& image, int class_id) {
    for (const auto& d : detect(det, image))
        if (d.class_id == class_id) return true;
    return false;
}

bool detects_any(const Detector& det, const TensorPtr& image, const std::vector<int>& classes) {
    for (const auto& d : detect(det, image))
        for (int c : classes)
            if (d.class_id == c) return true;
    return false;
}

double clean_detection_rate(const Detector& det, const std::vector<LabeledImage>& frames,
                            int target_class, double min_iou) {
    int total = 0, hit = 0;
    for (const auto& f : frames) {
        if (f.class_id != target_class) continue;
        ++total;
        for (const auto& d : detect(det, f.image)) {
            if (d.class_id == target_class && iou(d.box, f.box) >= min_iou) {
                ++hit;
                break;
            }
        }
    }
    if (total == 0) throw Error("clean_detection_rate: no frames of target class");
    return static_cast<double>(hit) / total;
}

// inverse of the decode mapping: targets for the sigmoid-squashed fields
static TensorPtr frame_loss(const Detector& det, const LabeledImage& frame,
                            const TrainOptions& opt) {
    const auto& cfg = det.config;
    const int S = cfg.grid_size, B = cfg.boxes_per_cell, C = cfg.class_count;

    int cx_cell = std::min(S - 1, std::max(0, static_cast<int>(frame.box.cx * S)));
    int cy_cell = std::min(S - 1, std::max(0, static_cast<int>(frame.box.cy * S)));
    const std::size_t resp = (static_cast<std::size_t>(cy_cell) * S + cx_cell) * B; // box 0

    auto raw = forward(det, frame.image);

    // objectness: responsible slot target 1 at weight 1, everything else 0 at lambda_noobj
    auto t_obj = Tensor::leaf({S, S, B, 1}, 0.0, false);
    auto w_obj = Tensor::leaf({S, S, B, 1}, opt.lambda_noobj, false);
    t_obj->values[resp] = 1.0;
    w_obj->values[resp] = 1.0;
    auto so = sigmoid(slice(raw.t, 3, 4, 1));
    auto d_obj = sub(so, t_obj);
    auto obj_term = reduce_sum(mul(mul(d_obj, d_obj), w_obj));

    // box: squared error on the responsible slot only
    auto t_box = Tensor::leaf({S, S, B, 4}, 0.0, false);
    auto m_box = Tensor::leaf({S, S, B, 4}, 0.0, false);
    t_box->values[resp * 4 + 0] = frame.box.cx * S - cx_cell;
    t_box->values[resp * 4 + 1] = frame.box.cy * S - cy_cell;
    t_box->values[resp * 4 + 2] = frame.box.w;
    t_box->values[resp * 4 + 3] = frame.box.h;
    for (int f = 0; f < 4; ++f) m_box->values[resp * 4 + f] = 1.0;
    auto sb = sigmoid(slice(raw.t, 3, 0, 4));
    auto d_box = sub(sb, t_box);
    auto box_term = reduce_sum(mul(mul(d_box, d_box), m_box));

    // class: cross-entropy at the responsible slot
    auto onehot = Tensor::leaf({S, S, B, C}, 0.0, false);
    onehot->values[resp * C + frame.class_id] = 1.0;
    auto probs = softmax(slice(raw.t, 3, 5, C), 3);
    auto p_y = reduce_sum(mul(probs, onehot));
    auto cls_term = neg(log_op(add(p_y, 1e-12)));

    // class logits elsewhere decay toward zero; unsupervised slots would
    // otherwise drift to confident junk that dominates max-over-slots probes
    auto w_bg = Tensor::leaf({S, S, B, C}, opt.lambda_bg_cls, false);
    for (int c = 0; c < C; ++c) w_bg->values[resp * C + c] = 0.0;
    auto logits = slice(raw.t, 3, 5, C);
    auto bg_term = reduce_sum(mul(mul(logits, logits), w_bg));

    return add(add(add(mul(box_term, opt.lambda_coord), obj_term), mul(cls_term, opt.lambda_cls)),
               bg_term);
}

TrainResult train_detector(Detector& det, const std::vector<LabeledImage>& dataset,
                           const TrainOptions& opt) {
    if (dataset.empty()) throw Error("train_detector: empty dataset");
    if (opt.epochs < 0) throw Error("train_detector: epochs must be >= 0");

    std::vector<const LabeledImage*> train_split, heldout;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (opt.heldout_every > 0 && i % static_cast<std::size_t>(opt.heldout_every) == 0)
            heldout.push_back(&dataset[i]);
        else
            train_split.push_back(&dataset[i]);
    }
    if (train_split.empty()) train_split = heldout;
    if (heldout.empty()) heldout = train_split;

    auto gate_rate = [&]() {
        std::vector<LabeledImage> gate;
        for (const auto* f : heldout)
            if (f->class_id == opt.target_class) gate.push_back(*f);
        if (gate.empty())
            for (const auto* f : heldout) gate.push_back(*f);
        int hit = 0;
        for (const auto& f : gate)
            for (const auto& d : detect(det, f.image))
                if (d.class_id == f.class_id && iou(d.box, f.box) >= opt.min_iou) {
                    ++hit;
                    break;
                }
        return static_cast<double>(hit) / static_cast<double>(gate.size());
    };

    TrainResult res;
    Adam adam(det.parameters(), AdamParams{opt.lr, 0.9, 0.999, 1e-8});
    auto params = det.parameters();

    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        std::vector<std::size_t> order(train_split.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(mix_seed(opt.seed, "detector-epoch", static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);

        double epoch_loss = 0.0;
        int batches = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(opt.batch_size)) {
            const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(opt.batch_size));
            TensorPtr total;
            for (std::size_t i = at; i < end; ++i) {
                auto l = frame_loss(det, *train_split[order[i]], opt);
                total = total ? add(total, l) : l;
            }
            total = div(total, static_cast<double>(end - at));
            backward(total);
            adam.step();
            for (auto& p : params) p->zero_grad();
            epoch_loss += total->item();
            ++batches;
        }
        res.epoch_losses.push_back(epoch_loss / std::max(1, batches));
        res.epochs_run = epoch + 1;

        if (opt.stop_when_clean) {
            res.clean_rate = gate_rate();
            if (res.clean_rate >= opt.clean_threshold) break;
        }
    }
    if (!opt.stop_when_clean || opt.epochs == 0) res.clean_rate = gate_rate();
    res.converged = res.clean_rate >= opt.clean_threshold;
    return res;
}

// ---- persistence ----

static std::string widths_to_text(const std::vector<int>& w) {
    std::string s;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(w[i]);
    }
    return s;
}

static std::vector<int> widths_from_text(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (part.empty()) continue;
        out.push_back(std::stoi(part));
    }
    return out;
}

void save_weights(const Detector& det, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("save_weights: cannot open " + path);
    const auto& c = det.config;
    char buf[64];
    os << "PFDET v1\n";
    os << "grid_size " << c.grid_size << "\n";
    os << "boxes_per_cell " << c.boxes_per_cell << "\n";
    os << "class_count " << c.class_count << "\n";
    os << "input_size " << c.input_size << "\n";
    os << "conv_widths " << widths_to_text(c.conv_widths) << "\n";
    os << "kernel_size " << c.kernel_size << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", c.detect_threshold);
    os << "detect_threshold " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", c.nms_iou);
    os << "nms_iou " << buf << "\n";
    os << "end\n";
    for (const auto& l : det.layers) {
        write_doubles_le(os, l.kernel->values.data(), l.kernel->size());
        write_doubles_le(os, l.bias->values.data(), l.bias->size());
    }
    if (!os) throw Error("save_weights: write failed for " + path);
}

Detector load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("load_weights: cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line != "PFDET v1")
        throw Error("load_weights: bad magic in " + path);
    DetectorConfig cfg;
    while (std::getline(is, line)) {
        if (line == "end") break;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "grid_size") ls >> cfg.grid_size;
        else if (key == "boxes_per_cell") ls >> cfg.boxes_per_cell;
        else if (key == "class_count") ls >> cfg.class_count;
        else if (key == "input_size") ls >> cfg.input_size;
        else if (key == "conv_widths") {
            std::string w;
            ls >> w;
            cfg.conv_widths = widths_from_text(w);
        } else if (key == "kernel_size") ls >> cfg.kernel_size;
        else if (key == "detect_threshold") ls >> cfg.detect_threshold;
        else if (key == "nms_iou") ls >> cfg.nms_iou;
        else throw Error("load_weights: unknown field '" + key + "' in " + path);
        if (!ls) throw Error("load_weights: malformed field '" + key + "' in " + path);
    }
    Detector det = Detector::zero_init(cfg);
    for (auto& l : det.layers) {
        read_doubles_le(is, l.kernel->values.data(), l.kernel->size());
        read_doubles_le(is, l.bias->values.data(), l.bias->size());
    }
    return det;
}

} // namespace pf
