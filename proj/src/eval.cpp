#include "pf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "pf/image_io.hpp"

namespace pf {

namespace {

EvalReport run_eval(const Detector& det, const std::vector<Frame>& frames,
                    const std::vector<Patch>* patches, const SplitPlan* plan,
                    const std::vector<int>& classes, const std::string& metric) {
    if (frames.empty()) throw Error("evaluation: no frames");
    if (classes.empty()) throw Error("evaluation: empty class set");

    EvalReport report;
    report.metric = metric;
    report.classes = classes;
    if (plan) {
        report.loss_kind = loss_kind_name(plan->loss);
        report.per_bin.assign(static_cast<std::size_t>(plan->k), 0.0);
    }

    std::vector<int> bin_total(plan ? static_cast<std::size_t>(plan->k) : 0, 0);
    std::vector<int> bin_hit(plan ? static_cast<std::size_t>(plan->k) : 0, 0);
    int hit = 0;
    for (const Frame& f : frames) {
        FrameRecord rec;
        rec.angle = f.angle;

        TensorPtr img = f.image;
        if (plan) {
            rec.bin = plan_bin(*plan, f.angle);
            img = place_all(f, plan->subset_patches[static_cast<std::size_t>(rec.bin)]);
        } else if (patches && !patches->empty()) {
            img = place_all(f, *patches);
        }

        for (const Detection& d : detect(det, img))
            if (std::find(classes.begin(), classes.end(), d.class_id) != classes.end())
                ++rec.hits;
        rec.success = rec.hits == 0;

        if (rec.success) ++hit;
        if (plan) {
            ++bin_total[static_cast<std::size_t>(rec.bin)];
            if (rec.success) ++bin_hit[static_cast<std::size_t>(rec.bin)];
        }
        report.frames.push_back(rec);
    }
    report.rate = 100.0 * hit / static_cast<double>(frames.size());
    for (std::size_t b = 0; b < bin_total.size(); ++b)
        report.per_bin[b] = bin_total[b] ? 100.0 * bin_hit[b] / bin_total[b] : 0.0;
    return report;
}

} // namespace

EvalReport attack_success_rate(const Detector& det, const std::vector<Frame>& frames,
                               const std::vector<Patch>& patches, int target_class) {
    return run_eval(det, frames, &patches, nullptr, {target_class}, "attack");
}

EvalReport attack_success_rate(const Detector& det, const std::vector<Frame>& frames,
                               const SplitPlan& plan, int target_class) {
    return run_eval(det, frames, nullptr, &plan, {target_class}, "attack");
}

EvalReport semantic_success_rate(const Detector& det, const std::vector<Frame>& frames,
                                 const std::vector<Patch>& patches,
                                 const std::vector<int>& classes) {
    return run_eval(det, frames, &patches, nullptr, classes, "semantic");
}

EvalReport semantic_success_rate(const Detector& det, const std::vector<Frame>& frames,
                                 const SplitPlan& plan, const std::vector<int>& classes) {
    return run_eval(det, frames, nullptr, &plan, classes, "semantic");
}

EvalReport clean_baseline(const Detector& det, const std::vector<Frame>& frames,
                          int target_class) {
    return run_eval(det, frames, nullptr, nullptr, {target_class}, "clean");
}

EvalReport cross_model_eval(const Detector& other, const std::vector<Frame>& frames,
                            const std::vector<Patch>& patches, int target_class) {
    return run_eval(other, frames, &patches, nullptr, {target_class}, "transfer");
}

EvalReport cross_model_eval(const Detector& other, const std::vector<Frame>& frames,
                            const SplitPlan& plan, int target_class) {
    return run_eval(other, frames, nullptr, &plan, {target_class}, "transfer");
}

void save_report_json(const EvalReport& r, const std::string& path) {
    nlohmann::json j;
    j["metric"] = r.metric;
    if (!r.loss_kind.empty()) j["loss"] = r.loss_kind;
    j["classes"] = r.classes;
    j["rate_percent"] = r.rate;
    j["frame_count"] = r.frames.size();
    if (!r.per_bin.empty()) j["per_bin_percent"] = r.per_bin;
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << j.dump(2) << "\n";
}

void save_report_csv(const EvalReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << "angle,bin,hits,success\n";
    char line[128];
    for (const FrameRecord& rec : r.frames) {
        std::snprintf(line, sizeof(line), "%.6f,%d,%d,%d\n", rec.angle, rec.bin, rec.hits,
                      rec.success ? 1 : 0);
        out << line;
    }
}

HeatMap objectness_heatmap(const Detector& det, const TensorPtr& image) {
    RawGridOutput raw = forward(det, image);
    HeatMap m;
    m.size = raw.S;
    m.kind = "objectness-sum";
    m.cells.assign(static_cast<std::size_t>(raw.S) * raw.S, 0.0);
    for (int cy = 0; cy < raw.S; ++cy)
        for (int cx = 0; cx < raw.S; ++cx) {
            double sum = 0;
            for (int b = 0; b < raw.B; ++b) {
                const double to =
                    raw.t->values[flat_index(raw.t->shape, {cy, cx, b, 4})];
                sum += 1.0 / (1.0 + std::exp(-to));
            }
            m.cells[static_cast<std::size_t>(cy) * raw.S + cx] = sum;
        }
    return m;
}

HeatMap class_map(const Detector& det, const TensorPtr& image) {
    RawGridOutput raw = forward(det, image);
    HeatMap m;
    m.size = raw.S;
    m.kind = "class-argmax";
    m.cells.assign(static_cast<std::size_t>(raw.S) * raw.S, 0.0);
    std::vector<double> probs(static_cast<std::size_t>(raw.C));
    for (int cy = 0; cy < raw.S; ++cy)
        for (int cx = 0; cx < raw.S; ++cx) {
            int best_class = 0;
            double best_prob = -1;
            for (int b = 0; b < raw.B; ++b) {
                double mx = -1e300;
                for (int c = 0; c < raw.C; ++c)
                    mx = std::max(mx,
                                  raw.t->values[flat_index(raw.t->shape, {cy, cx, b, 5 + c})]);
                double denom = 0;
                for (int c = 0; c < raw.C; ++c) {
                    probs[static_cast<std::size_t>(c)] = std::exp(
                        raw.t->values[flat_index(raw.t->shape, {cy, cx, b, 5 + c})] - mx);
                    denom += probs[static_cast<std::size_t>(c)];
                }
                for (int c = 0; c < raw.C; ++c) {
                    const double p = probs[static_cast<std::size_t>(c)] / denom;
                    if (p > best_prob) {
                        best_prob = p;
                        best_class = c;
                    }
                }
            }
            m.cells[static_cast<std::size_t>(cy) * raw.S + cx] = best_class;
        }
    return m;
}

double heatmap_total(const HeatMap& m) {
    double s = 0;
    for (double v : m.cells) s += v;
    return s;
}

std::vector<std::pair<int, int>> cells_in_box(int grid_size, const Box& box) {
    std::vector<std::pair<int, int>> out;
    for (int row = 0; row < grid_size; ++row)
        for (int col = 0; col < grid_size; ++col) {
            const double cx = (col + 0.5) / grid_size;
            const double cy = (row + 0.5) / grid_size;
            if (cx >= box.cx - box.w / 2 && cx <= box.cx + box.w / 2 &&
                cy >= box.cy - box.h / 2 && cy <= box.cy + box.h / 2)
                out.emplace_back(row, col);
        }
    return out;
}

void save_heatmap_csv(const HeatMap& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    char buf[64];
    for (int row = 0; row < m.size; ++row) {
        for (int col = 0; col < m.size; ++col) {
            std::snprintf(buf, sizeof(buf), "%.12g", m.cells[static_cast<std::size_t>(row) * m.size + col]);
            out << buf << (col + 1 == m.size ? "\n" : ",");
        }
    }
}

void save_heatmap_ppm(const HeatMap& m, const std::string& path, double lo, double hi,
                      int cell_pixels) {
    if (!(hi > lo)) throw Error("heatmap ppm: empty value range");
    if (cell_pixels < 1) throw Error("heatmap ppm: cell_pixels must be >= 1");
    const int side = m.size * cell_pixels;
    auto img = Tensor::leaf({3, side, side});
    for (int row = 0; row < m.size; ++row)
        for (int col = 0; col < m.size; ++col) {
            double g = (m.cells[static_cast<std::size_t>(row) * m.size + col] - lo) / (hi - lo);
            g = std::min(1.0, std::max(0.0, g));
            for (int y = row * cell_pixels; y < (row + 1) * cell_pixels; ++y)
                for (int x = col * cell_pixels; x < (col + 1) * cell_pixels; ++x)
                    for (int ch = 0; ch < 3; ++ch)
                        img->values[flat_index(img->shape, {ch, y, x})] = g;
        }
    write_ppm(path, *img);
}

std::vector<SweepPoint> screen_size_sweep(const SceneSpec& spec, const std::vector<double>& ratios,
                                          const AttackConfig& cfg, const Detector& det) {
    if (ratios.empty()) throw Error("sweep: no ratios");
    cfg.validate(det.config.class_count);

    std::vector<SweepPoint> points;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        const double ratio = ratios[i];
        if (ratio < 0 || ratio > 1)
            throw Error("sweep: ratio " + std::to_string(ratio) + " outside [0,1]");

        SceneSpec s = spec;
        s.screens.clear();
        if (ratio > 0) {
            auto [fw, fh] = face_extent(spec, Face::Back);
            const double aspect = 4.0 / 3.0;
            double h = std::sqrt(ratio * fw * fh / aspect);
            double w = aspect * h;
            if (w > fw || h > fh)
                throw Error("sweep: ratio " + std::to_string(ratio) +
                            " does not fit the back face");
            s.screens.push_back({0, Face::Back, 0.0, 0.0, w, h});
        }

        const std::uint64_t seed = mix_seed(cfg.seed, "sweep", i);
        auto test = generate_dataset(s, "test", seed);

        SweepPoint pt;
        pt.ratio = ratio;
        if (ratio == 0) {
            pt.rate = clean_baseline(det, test, cfg.target_class).rate;
        } else {
            auto train = generate_dataset(s, "train", seed);
            std::vector<Frame> with_screen;
            for (auto& f : train)
                if (!f.quads.empty()) with_screen.push_back(f);
            AttackConfig sub = cfg;
            sub.loss = LossKind::ObjCls;
            sub.seed = seed;
            auto crafted = craft_patches(with_screen, 1, sub, det);
            pt.rate = attack_success_rate(det, test, crafted.patches, cfg.target_class).rate;
        }
        points.push_back(pt);
    }
    return points;
}

void save_sweep_csv(const std::vector<SweepPoint>& points, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << "ratio,success_rate_percent\n";
    char line[64];
    for (const SweepPoint& p : points) {
        std::snprintf(line, sizeof(line), "%.6f,%.6f\n", p.ratio, p.rate);
        out << line;
    }
}

} // namespace pf
