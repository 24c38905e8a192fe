#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pf/attack.hpp"
#include "pf/config.hpp"
#include "pf/detector.hpp"
#include "pf/eval.hpp"
#include "pf/image_io.hpp"
#include "pf/placement.hpp"
#include "pf/scenegen.hpp"

namespace fs = std::filesystem;
using pf::Error;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::vector<std::string> sets;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
};

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

pf::RunConfig make_config(const GlobalArgs& g) {
    pf::RunConfig cfg;
    if (!g.config_path.empty()) cfg = pf::load_config(g.config_path);
    for (const std::string& kv : g.sets) {
        std::size_t eq = kv.find('=');
        if (eq == std::string::npos) throw Error("--set expects key=value, got: " + kv);
        pf::apply_override(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    pf::apply_env_overrides(cfg);
    if (g.seed_opt && g.seed_opt->count()) cfg.seed = g.seed;
    cfg.scene.validate();
    cfg.detector.validate();
    return cfg;
}

pf::Manifest start_manifest(const std::string& command, const pf::RunConfig& cfg,
                            const GlobalArgs& g) {
    pf::Manifest m;
    m.command = command;
    m.config = cfg;
    if (!g.config_path.empty()) pf::add_input(m, g.config_path);
    return m;
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

std::vector<pf::Frame> frames_with_class(std::vector<pf::Frame> frames, int class_id) {
    std::vector<pf::Frame> out;
    for (auto& f : frames) {
        bool has = false;
        for (const auto& t : f.truths)
            if (t.class_id == class_id) has = true;
        if (has) out.push_back(std::move(f));
    }
    return out;
}

std::vector<pf::Frame> frames_with_quads(std::vector<pf::Frame> frames) {
    std::vector<pf::Frame> out;
    for (auto& f : frames)
        if (!f.quads.empty()) out.push_back(std::move(f));
    return out;
}

void check_image_size(const std::vector<pf::Frame>& frames, const pf::DetectorConfig& cfg,
                      const std::string& what) {
    if (frames.empty()) throw Error(what + ": dataset is empty");
    const auto& sh = frames[0].image->shape;
    if (sh.size() != 3 || sh[1] != cfg.input_size || sh[2] != cfg.input_size)
        throw Error(what + ": frame size " + std::to_string(sh[1]) + "x" + std::to_string(sh[2]) +
                    " does not match detector input " + std::to_string(cfg.input_size));
}

std::string slot_prefix(const std::string& prefix, int slot) {
    return prefix + "_slot" + std::to_string(slot);
}

std::string bin_prefix(const std::string& prefix, int bin) {
    return prefix + "_bin" + std::to_string(bin);
}

void save_patch_set(const std::vector<pf::Patch>& patches, const pf::PatchMeta& base,
                    const std::string& prefix, pf::Manifest& m) {
    for (const pf::Patch& p : patches) {
        pf::PatchMeta meta = base;
        meta.slot_id = p.slot_id;
        const std::string pre = slot_prefix(prefix, p.slot_id);
        pf::save_patch(p, meta, pre);
        pf::add_output(m, pre + ".pfpatch");
        pf::add_output(m, pre + ".ppm");
    }
}

std::vector<pf::Patch> load_patch_set(const std::string& prefix) {
    std::vector<pf::Patch> out;
    for (int slot = 0;; ++slot) {
        const std::string pre = slot_prefix(prefix, slot);
        if (!fs::exists(pre + ".pfpatch") && !fs::exists(pre + ".ppm")) {
            if (slot == 0) throw Error("missing patch file: " + pre + ".pfpatch");
            break;
        }
        out.push_back(pf::load_patch(pre));
    }
    return out;
}

void save_plan(const pf::SplitPlan& plan, const pf::AttackConfig& cfg, const std::string& prefix,
               pf::Manifest& m) {
    for (int b = 0; b < plan.k; ++b) {
        pf::PatchMeta meta;
        meta.angle_lo = plan.boundaries[static_cast<std::size_t>(b)];
        meta.angle_hi = plan.boundaries[static_cast<std::size_t>(b) + 1];
        meta.loss_kind = pf::loss_kind_name(plan.loss);
        meta.seed = cfg.seed;
        meta.iterations = cfg.epochs;
        save_patch_set(plan.subset_patches[static_cast<std::size_t>(b)], meta,
                       bin_prefix(prefix, b), m);
    }

    nlohmann::json j;
    j["k"] = plan.k;
    j["boundaries"] = plan.boundaries;
    j["loss"] = pf::loss_kind_name(plan.loss);
    j["subset_rates_percent"] = plan.subset_rates;
    j["overall_rate_percent"] = plan.overall_rate;
    auto log = nlohmann::json::array();
    for (const auto& [k, rate] : plan.search_log) log.push_back({{"k", k}, {"rate", rate}});
    j["search_log"] = log;
    const std::string path = prefix + "_plan.json";
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << j.dump(2) << "\n";
    pf::add_output(m, path);
}

pf::SplitPlan load_plan(const std::string& prefix) {
    const std::string path = prefix + "_plan.json";
    std::ifstream in(path);
    if (!in) throw Error("missing plan file: " + path);
    nlohmann::json j;
    in >> j;

    pf::SplitPlan plan;
    plan.k = j.at("k").get<int>();
    plan.boundaries = j.at("boundaries").get<std::vector<double>>();
    plan.loss = pf::loss_kind_from_name(j.at("loss").get<std::string>());
    plan.subset_rates = j.at("subset_rates_percent").get<std::vector<double>>();
    plan.overall_rate = j.at("overall_rate_percent").get<double>();
    for (int b = 0; b < plan.k; ++b)
        plan.subset_patches.push_back(load_patch_set(bin_prefix(prefix, b)));
    return plan;
}

void ensure_parent_dir(const std::string& path) {
    fs::path p = fs::path(path).parent_path();
    if (!p.empty()) fs::create_directories(p);
}

void write_report(const pf::EvalReport& report, const std::string& prefix, pf::Manifest& m) {
    ensure_parent_dir(prefix);
    pf::save_report_json(report, prefix + "_report.json");
    pf::save_report_csv(report, prefix + "_frames.csv");
    pf::add_output(m, prefix + "_report.json");
    pf::add_output(m, prefix + "_frames.csv");
}

void finish(pf::Manifest& m, const Timer& timer, const std::string& path) {
    m.wall_time_s = timer.seconds();
    ensure_parent_dir(path);
    pf::save_manifest(m, path);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"toy adversarial screen-patch laboratory"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(pf::kToolName) + " " + pf::kToolVersion);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "key = value configuration file")
        ->check(CLI::ExistingFile);
    app.add_option("--set", g.sets, "override a config key, e.g. --set scene.image_size=96");
    g.seed_opt = app.add_option("--seed", g.seed, "override the run seed");

    // gen-dataset
    std::string gen_out;
    double gen_fpd = 0;
    auto* gen = app.add_subcommand("gen-dataset", "render train/test splits of the scene");
    gen->add_option("--out", gen_out, "output directory")->required();
    auto* fpd_opt = gen->add_option("--frames-per-degree", gen_fpd, "sampling density")
                        ->check(CLI::PositiveNumber);
    gen->callback([&] {
        Timer timer;
        pf::RunConfig cfg = make_config(g);
        if (fpd_opt->count()) cfg.scene.frames_per_degree = gen_fpd;
        cfg.scene.validate();
        pf::Manifest m = start_manifest("gen-dataset", cfg, g);

        auto train = pf::generate_dataset(cfg.scene, "train", cfg.seed);
        auto test = pf::generate_dataset(cfg.scene, "test", cfg.seed);
        pf::save_dataset(train, (fs::path(gen_out) / "train").string());
        pf::save_dataset(test, (fs::path(gen_out) / "test").string());
        pf::add_output(m, (fs::path(gen_out) / "train" / "index.txt").string());
        pf::add_output(m, (fs::path(gen_out) / "test" / "index.txt").string());
        finish(m, timer, (fs::path(gen_out) / "manifest.json").string());
        std::cout << "train frames: " << train.size() << "\n";
        std::cout << "test frames: " << test.size() << "\n";
    });

    // train-detector
    std::string tr_data, tr_out;
    int tr_epochs = 0;
    auto* tr = app.add_subcommand("train-detector", "fit the grid detector on a dataset");
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--out", tr_out, "weights file to write")->required();
    auto* tr_epochs_opt = tr->add_option("--epochs", tr_epochs, "training epochs")
                              ->check(CLI::PositiveNumber);
    tr->callback([&] {
        Timer timer;
        pf::RunConfig cfg = make_config(g);
        pf::Manifest m = start_manifest("train-detector", cfg, g);

        auto frames = pf::load_dataset(tr_data);
        pf::add_input(m, (fs::path(tr_data) / "index.txt").string());
        check_image_size(frames, cfg.detector, "train-detector");

        pf::Detector det = pf::Detector::random_init(cfg.detector, cfg.seed);
        pf::TrainOptions opt = pf::train_of(cfg);
        if (tr_epochs_opt->count()) opt.epochs = tr_epochs;
        auto result = pf::train_detector(det, pf::to_labeled(frames), opt);

        ensure_parent_dir(tr_out);
        pf::save_weights(det, tr_out);
        pf::add_output(m, tr_out);
        finish(m, timer, tr_out + ".manifest.json");
        std::cout << "epochs run: " << result.epochs_run << "\n";
        std::cout << "clean detection rate: " << result.clean_rate * 100 << "%\n";
        std::cout << (result.converged ? "reached" : "missed")
                  << " the clean-rate gate of " << opt.clean_threshold * 100 << "%\n";
    });

    // craft
    std::string cr_data, cr_weights, cr_out, cr_loss;
    int cr_screens = 0, cr_epochs = 0;
    double cr_alpha = -1;
    auto* cr = app.add_subcommand("craft", "optimize screen patches on a dataset");
    cr->add_option("--data", cr_data, "training dataset directory")->required();
    cr->add_option("--weights", cr_weights, "detector weights")->required();
    cr->add_option("--out", cr_out, "output prefix for patches and logs")->required();
    auto* cr_screens_opt = cr->add_option("--screens", cr_screens, "number of screen slots")
                               ->check(CLI::PositiveNumber);
    cr->add_option("--loss", cr_loss, "cls | obj | obj_cls | semantic");
    auto* cr_epochs_opt = cr->add_option("--epochs", cr_epochs, "crafting epochs")
                              ->check(CLI::NonNegativeNumber);
    auto* cr_alpha_opt = cr->add_option("--alpha", cr_alpha, "smoothness weight")
                             ->check(CLI::NonNegativeNumber);
    cr->callback([&] {
        Timer timer;
        pf::RunConfig cfg = make_config(g);
        pf::Manifest m = start_manifest("craft", cfg, g);

        pf::Detector det = pf::load_weights(cr_weights);
        pf::add_input(m, cr_weights);
        auto frames = frames_with_quads(pf::load_dataset(cr_data));
        pf::add_input(m, (fs::path(cr_data) / "index.txt").string());
        check_image_size(frames, det.config, "craft");

        pf::AttackConfig acfg = pf::attack_of(cfg);
        if (!cr_loss.empty()) acfg.loss = pf::loss_kind_from_name(cr_loss);
        if (cr_epochs_opt->count()) acfg.epochs = cr_epochs;
        if (cr_alpha_opt->count()) acfg.alpha = cr_alpha;
        const int n_screens = cr_screens_opt->count()
                                  ? cr_screens
                                  : static_cast<int>(cfg.scene.screens.size());

        auto result = pf::craft_patches(frames, n_screens, acfg, det);
        if (result.detector_warning)
            std::cerr << "warning: detector finds the clean target in fewer than 95% of the "
                         "crafting frames\n";

        ensure_parent_dir(cr_out);
        pf::PatchMeta meta;
        meta.angle_lo = cfg.scene.angle_min;
        meta.angle_hi = cfg.scene.angle_max;
        meta.loss_kind = pf::loss_kind_name(acfg.loss);
        meta.seed = acfg.seed;
        meta.iterations = acfg.epochs;
        save_patch_set(result.patches, meta, cr_out, m);

        const std::string log_path = cr_out + "_log.csv";
        std::ofstream log(log_path);
        if (!log) throw Error("cannot write " + log_path);
        log << "epoch,objective,smoothness,detector_loss\n";
        char line[160];
        for (std::size_t e = 0; e < result.log.size(); ++e) {
            std::snprintf(line, sizeof(line), "%zu,%.12g,%.12g,%.12g\n", e,
                          result.log[e].objective, result.log[e].tv_term,
                          result.log[e].loss_term);
            log << line;
        }
        log.close();
        pf::add_output(m, log_path);
        finish(m, timer, cr_out + "_manifest.json");
        if (!result.log.empty())
            std::cout << "final objective: " << result.log.back().objective << "\n";
        std::cout << "patches written: " << result.patches.size() << " (prefix " << cr_out
                  << ")\n";
    });

    // dynamic
    std::string dy_train, dy_test, dy_weights, dy_out, dy_loss;
    int dy_screens = 0;
    auto* dy = app.add_subcommand("dynamic", "search the number of view-angle patch subsets");
    dy->add_option("--train", dy_train, "training dataset directory")->required();
    dy->add_option("--test", dy_test, "evaluation dataset directory")->required();
    dy->add_option("--weights", dy_weights, "detector weights")->required();
    dy->add_option("--out", dy_out, "output prefix")->required();
    auto* dy_screens_opt = dy->add_option("--screens", dy_screens, "number of screen slots")
                               ->check(CLI::PositiveNumber);
    dy->add_option("--loss", dy_loss, "cls | obj | obj_cls | semantic");
    dy->callback([&] {
        Timer timer;
        pf::RunConfig cfg = make_config(g);
        pf::Manifest m = start_manifest("dynamic", cfg, g);

        pf::Detector det = pf::load_weights(dy_weights);
        pf::add_input(m, dy_weights);
        auto train = frames_with_quads(pf::load_dataset(dy_train));
        auto test = frames_with_class(pf::load_dataset(dy_test), cfg.attack.target_class);
        pf::add_input(m, (fs::path(dy_train) / "index.txt").string());
        pf::add_input(m, (fs::path(dy_test) / "index.txt").string());
        check_image_size(train, det.config, "dynamic");
        check_image_size(test, det.config, "dynamic");

        pf::AttackConfig acfg = pf::attack_of(cfg);
        if (!dy_loss.empty()) acfg.loss = pf::loss_kind_from_name(dy_loss);
        const int n_screens = dy_screens_opt->count()
                                  ? dy_screens
                                  : static_cast<int>(cfg.scene.screens.size());

        auto plan = pf::dynamic_split_search(train, test, n_screens, acfg, det,
                                             cfg.scene.angle_min, cfg.scene.angle_max);
        ensure_parent_dir(dy_out);
        save_plan(plan, acfg, dy_out, m);
        finish(m, timer, dy_out + "_manifest.json");

        std::cout << "chosen subsets: " << plan.k << "\n";
        std::cout << "overall success rate: " << plan.overall_rate << "%\n";
        for (const auto& [k, rate] : plan.search_log)
            std::cout << "  k=" << k << " rate=" << rate << "%\n";
    });

    // eval
    std::string ev_data, ev_weights, ev_patches, ev_plan, ev_out;
    bool ev_semantic = false;
    auto* ev = app.add_subcommand("eval", "measure attack success on a dataset");
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--weights", ev_weights, "detector weights")->required();
    auto* ev_patches_opt = ev->add_option("--patches", ev_patches, "patch prefix from craft");
    auto* ev_plan_opt = ev->add_option("--plan", ev_plan, "plan prefix from dynamic");
    ev_patches_opt->excludes(ev_plan_opt);
    ev->add_flag("--semantic", ev_semantic, "require every vehicle-like class to vanish");
    ev->add_option("--out", ev_out, "output prefix")->required();
    ev->callback([&] {
        Timer timer;
        pf::RunConfig cfg = make_config(g);
        pf::Manifest m = start_manifest("eval", cfg, g);

        pf::Detector det = pf::load_weights(ev_weights);
        pf::add_input(m, ev_weights);
        auto frames = frames_with_class(pf::load_dataset(ev_data), cfg.attack.target_class);
        pf::add_input(m, (fs::path(ev_data) / "index.txt").string());
        check_image_size(frames, det.config, "eval");

        pf::EvalReport report;
        if (ev_plan_opt->count()) {
            pf::SplitPlan plan = load_plan(ev_plan);
            report = ev_semantic
                         ? pf::semantic_success_rate(det, frames, plan,
                                                     cfg.attack.semantic_classes)
                         : pf::attack_success_rate(det, frames, plan, cfg.attack.target_class);
        } else if (ev_patches_opt->count()) {
            auto patches = load_patch_set(ev_patches);
            report = ev_semantic
                         ? pf::semantic_success_rate(det, frames, patches,
                                                     cfg.attack.semantic_classes)
                         : pf::attack_success_rate(det, frames, patches,
                                                   cfg.attack.target_class);
        } else {
            report = pf::clean_baseline(det, frames, cfg.attack.target_class);
        }
        write_report(report, ev_out, m);
        finish(m, timer, ev_out + "_manifest.json");
        std::cout << report.metric << " success rate: " << report.rate << "% over "
                  << report.frames.size() << " frames\n";
    });

    // heatmap
    std::string hm_data, hm_weights, hm_patches, hm_out;
    int hm_index = 0;
    auto* hm = app.add_subcommand("heatmap", "objectness and class maps for one frame");
    hm->add_option("--data", hm_data, "dataset directory")->required();
    hm->add_option("--frame-index", hm_index, "frame to analyze")
        ->check(CLI::NonNegativeNumber);
    hm->add_option("--weights", hm_weights, "detector weights")->required();
    auto* hm_patches_opt = hm->add_option("--patches", hm_patches, "patch prefix to composite");
    hm->add_option("--out", hm_out, "output prefix")->required();
    hm->callback([&] {
        Timer timer;
        pf::RunConfig cfg = make_config(g);
        pf::Manifest m = start_manifest("heatmap", cfg, g);

        pf::Detector det = pf::load_weights(hm_weights);
        pf::add_input(m, hm_weights);
        auto frames = pf::load_dataset(hm_data);
        pf::add_input(m, (fs::path(hm_data) / "index.txt").string());
        if (hm_index < 0 || static_cast<std::size_t>(hm_index) >= frames.size())
            throw Error("heatmap: frame index " + std::to_string(hm_index) +
                        " outside dataset of " + std::to_string(frames.size()) + " frames");
        const pf::Frame& frame = frames[static_cast<std::size_t>(hm_index)];
        check_image_size(frames, det.config, "heatmap");

        pf::TensorPtr img = frame.image;
        if (hm_patches_opt->count()) img = pf::place_all(frame, load_patch_set(hm_patches));

        auto obj = pf::objectness_heatmap(det, img);
        auto cls = pf::class_map(det, img);
        ensure_parent_dir(hm_out);
        pf::save_heatmap_csv(obj, hm_out + "_obj.csv");
        pf::save_heatmap_ppm(obj, hm_out + "_obj.ppm", 0, det.config.boxes_per_cell);
        pf::save_heatmap_csv(cls, hm_out + "_class.csv");
        pf::save_heatmap_ppm(cls, hm_out + "_class.ppm", 0, det.config.class_count - 1);
        for (const char* suffix : {"_obj.csv", "_obj.ppm", "_class.csv", "_class.ppm"})
            pf::add_output(m, hm_out + suffix);
        finish(m, timer, hm_out + "_manifest.json");
        std::cout << "objectness total: " << pf::heatmap_total(obj) << "\n";
    });

    // sweep
    std::string sw_weights, sw_out;
    std::vector<double> sw_ratios;
    auto* sw = app.add_subcommand("sweep", "success rate as a function of screen area");
    sw->add_option("--weights", sw_weights, "detector weights")->required();
    sw->add_option("--ratios", sw_ratios, "screen/back-face area ratios in [0,1]")
        ->delimiter(',');
    sw->add_option("--out", sw_out, "output prefix")->required();
    sw->callback([&] {
        Timer timer;
        pf::RunConfig cfg = make_config(g);
        pf::Manifest m = start_manifest("sweep", cfg, g);

        pf::Detector det = pf::load_weights(sw_weights);
        pf::add_input(m, sw_weights);
        std::vector<double> ratios =
            sw_ratios.empty() ? std::vector<double>{0.0, 0.05, 0.10, 0.15, 0.25} : sw_ratios;

        auto points = pf::screen_size_sweep(cfg.scene, ratios, pf::attack_of(cfg), det);
        ensure_parent_dir(sw_out);
        pf::save_sweep_csv(points, sw_out + "_sweep.csv");
        pf::add_output(m, sw_out + "_sweep.csv");
        finish(m, timer, sw_out + "_manifest.json");
        for (const auto& p : points)
            std::cout << "ratio " << p.ratio << " -> " << p.rate << "%\n";
    });

    // transfer
    std::string xf_data, xf_weights, xf_patches, xf_plan, xf_out;
    auto* xf = app.add_subcommand("transfer", "evaluate existing patches against another detector");
    xf->add_option("--data", xf_data, "dataset directory")->required();
    xf->add_option("--weights", xf_weights, "weights of the detector under attack")->required();
    auto* xf_patches_opt = xf->add_option("--patches", xf_patches, "patch prefix from craft");
    auto* xf_plan_opt = xf->add_option("--plan", xf_plan, "plan prefix from dynamic");
    xf_patches_opt->excludes(xf_plan_opt);
    xf->add_option("--out", xf_out, "output prefix")->required();
    xf->callback([&] {
        Timer timer;
        pf::RunConfig cfg = make_config(g);
        pf::Manifest m = start_manifest("transfer", cfg, g);

        pf::Detector det = pf::load_weights(xf_weights);
        pf::add_input(m, xf_weights);
        auto frames = frames_with_class(pf::load_dataset(xf_data), cfg.attack.target_class);
        pf::add_input(m, (fs::path(xf_data) / "index.txt").string());
        check_image_size(frames, det.config, "transfer");

        pf::EvalReport report;
        if (xf_plan_opt->count()) {
            report = pf::cross_model_eval(det, frames, load_plan(xf_plan),
                                          cfg.attack.target_class);
        } else if (xf_patches_opt->count()) {
            report = pf::cross_model_eval(det, frames, load_patch_set(xf_patches),
                                          cfg.attack.target_class);
        } else {
            throw Error("transfer: needs --patches or --plan");
        }
        write_report(report, xf_out, m);
        finish(m, timer, xf_out + "_manifest.json");
        std::cout << "transfer success rate: " << report.rate << "% over "
                  << report.frames.size() << " frames\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
