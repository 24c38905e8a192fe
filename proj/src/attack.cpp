#include "pf/attack.hpp"

#include <algorithm>
#include <cmath>

#include "pf/optim.hpp"

namespace pf {

std::string loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::Cls: return "cls";
        case LossKind::Obj: return "obj";
        case LossKind::ObjCls: return "obj_cls";
        case LossKind::Semantic: return "semantic";
    }
    throw Error("bad loss kind");
}

LossKind loss_kind_from_name(const std::string& name) {
    if (name == "cls") return LossKind::Cls;
    if (name == "obj") return LossKind::Obj;
    if (name == "obj_cls") return LossKind::ObjCls;
    if (name == "semantic") return LossKind::Semantic;
    throw Error("unknown loss kind: " + name);
}

void AttackConfig::validate(int class_count) const {
    if (target_class < 0 || target_class >= class_count)
        throw Error("attack config: target_class out of range");
    if (alpha < 0) throw Error("attack config: alpha must be >= 0");
    if (lr <= 0) throw Error("attack config: lr must be positive");
    if (epochs < 0) throw Error("attack config: epochs must be >= 0");
    if (batch_size < 1) throw Error("attack config: batch_size must be >= 1");
    if (patch_size < 2) throw Error("attack config: patch_size must be >= 2");
    if (loss == LossKind::Semantic) {
        if (semantic_classes.empty()) throw Error("attack config: semantic class set is empty");
        if (semantic_base == LossKind::Obj)
            throw Error("attack config: semantic loss needs a class-aware base (cls or obj_cls)");
        if (semantic_base == LossKind::Semantic)
            throw Error("attack config: semantic base cannot be semantic");
        for (int c : semantic_classes)
            if (c < 0 || c >= class_count)
                throw Error("attack config: semantic class out of range");
    }
}

TensorPtr cls_loss(const RawGridOutput& raw, int target_class) {
    if (target_class < 0 || target_class >= raw.C) throw Error("cls_loss: class out of range");
    auto probs = softmax(slice(raw.t, 3, 5, raw.C), 3);
    return reduce_max(slice(probs, 3, target_class, 1));
}

TensorPtr obj_loss(const RawGridOutput& raw) {
    return reduce_max(sigmoid(slice(raw.t, 3, 4, 1)));
}

TensorPtr obj_cls_loss(const RawGridOutput& raw, int target_class) {
    if (target_class < 0 || target_class >= raw.C) throw Error("obj_cls_loss: class out of range");
    auto obj = sigmoid(slice(raw.t, 3, 4, 1));
    auto probs = softmax(slice(raw.t, 3, 5, raw.C), 3);
    auto py = slice(probs, 3, target_class, 1);
    return reduce_max(mul(obj, py));
}

TensorPtr total_variation(const TensorPtr& patch) {
    if (patch->shape.size() != 3) throw Error("total_variation: patch must be [C,h,w]");
    const int h = patch->shape[1], w = patch->shape[2];
    if (h < 2 || w < 2) return Tensor::scalar(0.0);
    auto a = slice(slice(patch, 1, 0, h - 1), 2, 0, w - 1);
    auto down = slice(slice(patch, 1, 1, h - 1), 2, 0, w - 1);
    auto right = slice(slice(patch, 1, 0, h - 1), 2, 1, w - 1);
    auto dx = sub(a, down);
    auto dy = sub(a, right);
    auto sq = add(add(mul(dx, dx), mul(dy, dy)), 1e-8);
    return reduce_sum(sqrt_op(sq));
}

static TensorPtr frame_attack_loss(const RawGridOutput& raw, const AttackConfig& cfg) {
    switch (cfg.loss) {
        case LossKind::Cls: return cls_loss(raw, cfg.target_class);
        case LossKind::Obj: return obj_loss(raw);
        case LossKind::ObjCls: return obj_cls_loss(raw, cfg.target_class);
        case LossKind::Semantic: {
            TensorPtr sum;
            for (int y : cfg.semantic_classes) {
                auto l = cfg.semantic_base == LossKind::Cls ? cls_loss(raw, y)
                                                            : obj_cls_loss(raw, y);
                sum = sum ? add(sum, l) : l;
            }
            return sum;
        }
    }
    throw Error("bad loss kind");
}

ObjectiveParts objective(const std::vector<Patch>& patches,
                         const std::vector<TensorPtr>& transformed,
                         const std::vector<const Frame*>& batch, const AttackConfig& cfg,
                         const Detector& det) {
    if (patches.empty()) throw Error("objective: no patches");
    if (batch.empty()) throw Error("objective: empty batch");
    cfg.validate(det.config.class_count);

    TensorPtr tv_total;
    for (const auto& p : patches) {
        auto tv = total_variation(p.pixels);
        tv_total = tv_total ? add(tv_total, tv) : tv;
    }

    TensorPtr loss_sum;
    for (const Frame* f : batch) {
        auto img = place_all(*f, patches, transformed);
        auto raw = forward(det, img);
        auto l = frame_attack_loss(raw, cfg);
        loss_sum = loss_sum ? add(loss_sum, l) : l;
    }
    auto loss_mean = div(loss_sum, static_cast<double>(batch.size()));

    ObjectiveParts parts;
    parts.tv_term = tv_total;
    parts.loss_term = loss_mean;
    parts.total = add(mul(tv_total, cfg.alpha), loss_mean);
    return parts;
}

CraftResult craft_patches(const std::vector<const Frame*>& subset, int n_screens,
                          const AttackConfig& cfg, const Detector& det) {
    cfg.validate(det.config.class_count);
    if (subset.empty()) throw Error("craft_patches: empty frame subset");
    if (n_screens < 1) throw Error("craft_patches: n_screens must be >= 1");
    for (const Frame* f : subset)
        if (f->quads.empty())
            throw Error("craft_patches: subset contains a frame without a visible screen");

    CraftResult res;
    for (int slot = 0; slot < n_screens; ++slot)
        res.patches.push_back(init_patch(slot, cfg.patch_size, cfg.seed));

    {
        std::vector<LabeledImage> probe;
        for (const Frame* f : subset)
            if (f->truths.size() == 1 && f->truths[0].class_id == cfg.target_class)
                probe.push_back({f->image, f->truths[0].class_id, f->truths[0].box});
        if (!probe.empty())
            res.detector_warning = clean_detection_rate(det, probe, cfg.target_class) < 0.95;
    }

    std::vector<TensorPtr> pixels;
    for (auto& p : res.patches) pixels.push_back(p.pixels);
    Adam adam(pixels, AdamParams{cfg.lr, 0.9, 0.999, 1e-8});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(subset.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(mix_seed(cfg.seed, "attack-epoch", static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        EpochStats stats;
        int batches = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
            std::vector<const Frame*> batch;
            for (std::size_t i = at; i < end; ++i) batch.push_back(subset[order[i]]);

            // one transform draw per patch per batch iteration
            Rng trng(mix_seed(cfg.seed, "attack-transform",
                              static_cast<std::uint64_t>(epoch) * 1000003ULL + batches));
            std::vector<TensorPtr> transformed;
            for (const auto& p : res.patches) {
                auto params = draw_transform(cfg.transforms, p.pixels->shape, trng);
                transformed.push_back(apply_random_transform(p.pixels, params));
            }

            auto parts = objective(res.patches, transformed, batch, cfg, det);
            backward(parts.total);
            adam.step();
            for (auto& px : pixels) {
                for (double& v : px->values) v = std::min(1.0, std::max(0.0, v));
                px->zero_grad();
            }

            stats.objective += parts.total->item();
            stats.tv_term += parts.tv_term->item();
            stats.loss_term += parts.loss_term->item();
            ++batches;
        }
        if (batches > 0) {
            stats.objective /= batches;
            stats.tv_term /= batches;
            stats.loss_term /= batches;
        }
        res.log.push_back(stats);
    }
    return res;
}

CraftResult craft_patches(const std::vector<Frame>& subset, int n_screens, const AttackConfig& cfg,
                          const Detector& det) {
    std::vector<const Frame*> ptrs;
    ptrs.reserve(subset.size());
    for (const auto& f : subset) ptrs.push_back(&f);
    return craft_patches(ptrs, n_screens, cfg, det);
}

// ---- dynamic split search ----

int plan_bin(const SplitPlan& plan, double angle) {
    const double lo = plan.boundaries.front(), hi = plan.boundaries.back();
    if (angle < lo || angle > hi)
        throw Error("plan_bin: angle " + std::to_string(angle) + " outside plan range");
    const double width = (hi - lo) / plan.k;
    int bin = static_cast<int>((angle - lo) / width);
    return std::min(bin, plan.k - 1);
}

std::vector<std::vector<const Frame*>> split_frames(const std::vector<const Frame*>& frames,
                                                    double lo, double hi, int k) {
    if (k < 1) throw Error("split_frames: k must be >= 1");
    if (!(hi > lo)) throw Error("split_frames: empty angle range");
    std::vector<std::vector<const Frame*>> bins(static_cast<std::size_t>(k));
    const double width = (hi - lo) / k;
    for (const Frame* f : frames) {
        if (f->angle < lo || f->angle > hi)
            throw Error("split_frames: frame angle outside range");
        int bin = std::min(k - 1, static_cast<int>((f->angle - lo) / width));
        bins[static_cast<std::size_t>(bin)].push_back(f);
    }
    for (int b = 0; b < k; ++b)
        if (bins[static_cast<std::size_t>(b)].empty())
            throw Error("split_frames: bin " + std::to_string(b) + " of " + std::to_string(k) +
                        " holds no frames (range split too finely for dataset density)");
    return bins;
}

std::pair<double, std::vector<double>> plan_success_rate(const SplitPlan& plan,
                                                         const std::vector<const Frame*>& test,
                                                         const Detector& det,
                                                         const AttackConfig& cfg) {
    if (test.empty()) throw Error("plan_success_rate: empty test set");
    std::vector<int> bin_total(static_cast<std::size_t>(plan.k), 0);
    std::vector<int> bin_hit(static_cast<std::size_t>(plan.k), 0);
    int total = 0, hit = 0;
    for (const Frame* f : test) {
        const int bin = plan_bin(plan, f->angle);
        auto img = place_all(*f, plan.subset_patches[static_cast<std::size_t>(bin)]);
        const bool fooled = cfg.loss == LossKind::Semantic
                                ? !detects_any(det, img, cfg.semantic_classes)
                                : !detects_class(det, img, cfg.target_class);
        ++bin_total[static_cast<std::size_t>(bin)];
        ++total;
        if (fooled) {
            ++bin_hit[static_cast<std::size_t>(bin)];
            ++hit;
        }
    }
    std::vector<double> per_bin(static_cast<std::size_t>(plan.k), 0.0);
    for (int b = 0; b < plan.k; ++b)
        per_bin[static_cast<std::size_t>(b)] =
            bin_total[b] ? 100.0 * bin_hit[b] / bin_total[b] : 0.0;
    return {100.0 * hit / total, per_bin};
}

static SplitPlan make_plan(double lo, double hi, int k, LossKind loss) {
    SplitPlan plan;
    plan.k = k;
    plan.loss = loss;
    plan.boundaries.resize(static_cast<std::size_t>(k) + 1);
    for (int i = 0; i <= k; ++i)
        plan.boundaries[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / k;
    return plan;
}

SplitPlan dynamic_split_search_core(const std::vector<const Frame*>& train, double lo, double hi,
                                    LossKind loss, const SearchHooks& hooks) {
    std::vector<std::pair<int, double>> log;

    SplitPlan current = make_plan(lo, hi, 1, loss);
    current.subset_patches = hooks.craft_bins(split_frames(train, lo, hi, 1), 1);
    std::tie(current.overall_rate, current.subset_rates) = hooks.evaluate(current);
    log.emplace_back(1, current.overall_rate);

    for (;;) {
        const int k = current.k + 1;
        SplitPlan candidate = make_plan(lo, hi, k, loss);
        candidate.subset_patches = hooks.craft_bins(split_frames(train, lo, hi, k), k);
        std::tie(candidate.overall_rate, candidate.subset_rates) = hooks.evaluate(candidate);
        log.emplace_back(k, candidate.overall_rate);
        if (candidate.overall_rate <= current.overall_rate) break;
        current = std::move(candidate);
    }
    current.search_log = std::move(log);
    return current;
}

SplitPlan dynamic_split_search(const std::vector<Frame>& train, const std::vector<Frame>& test,
                               int n_screens, const AttackConfig& cfg, const Detector& det,
                               double lo, double hi) {
    std::vector<const Frame*> train_ptrs, test_ptrs;
    for (const auto& f : train) train_ptrs.push_back(&f);
    for (const auto& f : test) test_ptrs.push_back(&f);

    SearchHooks hooks;
    hooks.craft_bins = [&](const std::vector<std::vector<const Frame*>>& bins, int k) {
        std::vector<std::vector<Patch>> out;
        for (std::size_t b = 0; b < bins.size(); ++b) {
            AttackConfig sub = cfg;
            sub.seed = mix_seed(cfg.seed, "split-" + std::to_string(k), b);
            out.push_back(craft_patches(bins[b], n_screens, sub, det).patches);
        }
        return out;
    };
    hooks.evaluate = [&](const SplitPlan& candidate) {
        return plan_success_rate(candidate, test_ptrs, det, cfg);
    };
    return dynamic_split_search_core(train_ptrs, lo, hi, cfg.loss, hooks);
}

} // namespace pf
