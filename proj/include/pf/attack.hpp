#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pf/detector.hpp"
#include "pf/placement.hpp"
#include "pf/scenegen.hpp"

namespace pf {

enum class LossKind { Cls, Obj, ObjCls, Semantic };

std::string loss_kind_name(LossKind k);
LossKind loss_kind_from_name(const std::string& name);

struct AttackConfig {
    LossKind loss = LossKind::ObjCls;
    int target_class = 0;
    std::vector<int> semantic_classes = {0, 1, 2};
    LossKind semantic_base = LossKind::ObjCls; // Cls or ObjCls
    double alpha = 0.1;   // weight of the smoothness term
    double lr = 0.03;
    int epochs = 60;
    int batch_size = 8;
    std::uint64_t seed = 7;
    int patch_size = 24;
    TransformRanges transforms;

    void validate(int class_count) const;
};

// highest class-y probability over all S*S*B slots
TensorPtr cls_loss(const RawGridOutput& raw, int target_class);
// highest objectness over all slots
TensorPtr obj_loss(const RawGridOutput& raw);
// highest per-slot product of objectness and class-y probability
TensorPtr obj_cls_loss(const RawGridOutput& raw, int target_class);

// sum over channels and pixel pairs of sqrt(dx^2 + dy^2 + 1e-8)
TensorPtr total_variation(const TensorPtr& patch);

struct ObjectiveParts {
    TensorPtr total;     // alpha * tv + mean loss
    TensorPtr tv_term;   // sum of per-patch smoothness
    TensorPtr loss_term; // batch mean of the detector loss
};

ObjectiveParts objective(const std::vector<Patch>& patches,
                         const std::vector<TensorPtr>& transformed,
                         const std::vector<const Frame*>& batch, const AttackConfig& cfg,
                         const Detector& det);

struct EpochStats {
    double objective = 0, tv_term = 0, loss_term = 0;
};

struct CraftResult {
    std::vector<Patch> patches;
    std::vector<EpochStats> log; // per-epoch batch means
    bool detector_warning = false;
};

CraftResult craft_patches(const std::vector<const Frame*>& subset, int n_screens,
                          const AttackConfig& cfg, const Detector& det);
CraftResult craft_patches(const std::vector<Frame>& subset, int n_screens,
                          const AttackConfig& cfg, const Detector& det);

struct SplitPlan {
    int k = 1;
    std::vector<double> boundaries; // k+1 ascending values
    std::vector<std::vector<Patch>> subset_patches;
    std::vector<double> subset_rates; // percent, aligned with bins
    double overall_rate = 0;          // percent over the whole test set
    LossKind loss = LossKind::ObjCls;
    std::vector<std::pair<int, double>> search_log; // (k, rate) for every evaluated k
};

// bin index for an angle; throws if the angle lies outside the plan range
int plan_bin(const SplitPlan& plan, double angle);

// equal-width bins over [lo,hi]; throws if a bin receives no frames
std::vector<std::vector<const Frame*>> split_frames(const std::vector<const Frame*>& frames,
                                                    double lo, double hi, int k);

// fraction of frames (percent) with no surviving target detection, plus
// per-bin rates; uses the semantic class set when cfg.loss == Semantic
std::pair<double, std::vector<double>> plan_success_rate(const SplitPlan& plan,
                                                         const std::vector<const Frame*>& test,
                                                         const Detector& det,
                                                         const AttackConfig& cfg);

// The search loop with crafting/evaluation factored out, so its control flow
// can be exercised on scripted rates.
struct SearchHooks {
    std::function<std::vector<std::vector<Patch>>(
        const std::vector<std::vector<const Frame*>>& bins, int k)>
        craft_bins;
    std::function<std::pair<double, std::vector<double>>(const SplitPlan& candidate)> evaluate;
};

SplitPlan dynamic_split_search_core(const std::vector<const Frame*>& train, double lo, double hi,
                                    LossKind loss, const SearchHooks& hooks);

SplitPlan dynamic_split_search(const std::vector<Frame>& train, const std::vector<Frame>& test,
                               int n_screens, const AttackConfig& cfg, const Detector& det,
                               double lo, double hi);

} // namespace pf
