#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "pf/config.hpp"
#include "pf/image_io.hpp"

using namespace pf;
namespace fs = std::filesystem;

namespace {

std::string temp_file(const char* name) {
    return (fs::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("canonical text is a parse fixpoint") {
    RunConfig cfg;
    const std::string text = canonical_text(cfg);
    RunConfig back = parse_config_text(text);
    CHECK(canonical_text(back) == text);
    CHECK(config_hash(back) == config_hash(cfg));
}

TEST_CASE("canonical text survives awkward doubles") {
    RunConfig cfg;
    cfg.scene.frames_per_degree = 1.0 / 3.0;
    cfg.attack.alpha = 1e-17;
    cfg.train.lr = 0.1 + 0.2; // 0.30000000000000004
    cfg.scene.camera_height = 1.6;
    RunConfig back = parse_config_text(canonical_text(cfg));
    CHECK(back.scene.frames_per_degree == cfg.scene.frames_per_degree);
    CHECK(back.attack.alpha == cfg.attack.alpha);
    CHECK(back.train.lr == cfg.train.lr);
    CHECK(canonical_text(back) == canonical_text(cfg));
}

TEST_CASE("parser accepts comments and blank lines, rejects junk") {
    RunConfig cfg = parse_config_text("# a comment\n\nseed = 42\n  scene.image_size = 64  \n");
    CHECK(cfg.seed == 42);
    CHECK(cfg.scene.image_size == 64);
    CHECK_THROWS_AS(parse_config_text("scene.imagesize = 64\n"), Error);
    CHECK_THROWS_AS(parse_config_text("scene.image_size 64\n"), Error);
    CHECK_THROWS_AS(parse_config_text("scene.image_size = sixty\n"), Error);
}

TEST_CASE("overrides reach every section") {
    RunConfig cfg;
    apply_override(cfg, "seed", "123");
    apply_override(cfg, "scene.pixel_noise", "0.07");
    apply_override(cfg, "scene.gradient_background", "false");
    apply_override(cfg, "detector.conv_widths", "6,12,20");
    apply_override(cfg, "detector.kernel_size", "3");
    apply_override(cfg, "attack.loss", "semantic");
    apply_override(cfg, "attack.semantic_classes", "0,1,2");
    apply_override(cfg, "attack.semantic_base", "cls");
    apply_override(cfg, "attack.transforms.contrast_lo", "0.93");
    apply_override(cfg, "train.lambda_bg_cls", "0.02");
    apply_override(cfg, "train.stop_when_clean", "true");

    CHECK(cfg.seed == 123);
    CHECK(cfg.scene.pixel_noise == 0.07);
    CHECK_FALSE(cfg.scene.gradient_background);
    CHECK(cfg.detector.conv_widths == std::vector<int>{6, 12, 20});
    CHECK(cfg.detector.kernel_size == 3);
    CHECK(cfg.attack.loss == LossKind::Semantic);
    CHECK(cfg.attack.semantic_classes == std::vector<int>{0, 1, 2});
    CHECK(cfg.attack.semantic_base == LossKind::Cls);
    CHECK(cfg.attack.transforms.contrast_lo == 0.93);
    CHECK(cfg.train.lambda_bg_cls == 0.02);
    CHECK(cfg.train.stop_when_clean);

    CHECK_THROWS_AS(apply_override(cfg, "scene.no_such_key", "1"), Error);
    CHECK_THROWS_AS(apply_override(cfg, "attack.loss", "sneaky"), Error);
}

TEST_CASE("screen and palette overrides parse structured values") {
    RunConfig cfg;
    apply_override(cfg, "scene.screens", "0:back:0:-0.1:1.6:0.9;1:left:0:-0.05:3.2:0.95");
    REQUIRE(cfg.scene.screens.size() == 2);
    CHECK(cfg.scene.screens[0].id == 0);
    CHECK(cfg.scene.screens[0].face == Face::Back);
    CHECK(cfg.scene.screens[0].off_v == -0.1);
    CHECK(cfg.scene.screens[0].width == 1.6);
    CHECK(cfg.scene.screens[1].face == Face::Left);
    CHECK(cfg.scene.screens[1].height == 0.95);

    apply_override(cfg, "scene.palette", "1,0,0;0,1,0;0,0,1");
    REQUIRE(cfg.scene.palette.size() == 3);
    CHECK(cfg.scene.palette[1][1] == 1.0);

    CHECK_THROWS_AS(apply_override(cfg, "scene.screens", "0:back:0:-0.1:1.6"), Error);
    CHECK_THROWS_AS(apply_override(cfg, "scene.screens", "0:roof:0:0:1:1"), Error);

    // structured values round-trip through the canonical form
    RunConfig back = parse_config_text(canonical_text(cfg));
    CHECK(back.scene.screens.size() == 2);
    CHECK(back.scene.screens[1].width == cfg.scene.screens[1].width);
    CHECK(back.scene.palette == cfg.scene.palette);
}

TEST_CASE("config hash tracks every field") {
    RunConfig a;
    RunConfig b;
    CHECK(config_hash(a) == config_hash(b));
    b.attack.alpha += 1e-9;
    CHECK(config_hash(a) != config_hash(b));

    RunConfig c;
    c.train.heldout_every++;
    CHECK(config_hash(a) != config_hash(c));
}

TEST_CASE("environment seed override wins") {
    RunConfig cfg;
    cfg.seed = 7;
    setenv("PF_SEED", "991", 1);
    apply_env_overrides(cfg);
    CHECK(cfg.seed == 991);
    unsetenv("PF_SEED");
    apply_env_overrides(cfg);
    CHECK(cfg.seed == 991); // untouched when unset

    setenv("PF_SEED", "not-a-number", 1);
    CHECK_THROWS_AS(apply_env_overrides(cfg), Error);
    unsetenv("PF_SEED");
}

TEST_CASE("seed propagates into stage configs") {
    RunConfig cfg;
    cfg.seed = 555;
    CHECK(attack_of(cfg).seed == 555);
    CHECK(train_of(cfg).seed == 555);
    CHECK(attack_of(cfg).loss == cfg.attack.loss);
    CHECK(train_of(cfg).epochs == cfg.train.epochs);
}

TEST_CASE("load_config reads files and reports missing ones") {
    const std::string path = temp_file("pf_cfg.txt");
    std::ofstream out(path);
    out << "seed = 31\nscene.image_size = 48\n";
    out.close();
    RunConfig cfg = load_config(path);
    CHECK(cfg.seed == 31);
    CHECK(cfg.scene.image_size == 48);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_config(path), Error);
}

TEST_CASE("manifests digest their inputs and outputs") {
    const std::string f1 = temp_file("pf_m_in.bin");
    const std::string f2 = temp_file("pf_m_out.bin");
    std::ofstream(f1) << "hello";
    std::ofstream(f2) << "world";

    Manifest m;
    m.command = "unit-test";
    m.wall_time_s = 1.5;
    add_input(m, f1);
    add_output(m, f2);
    REQUIRE(m.inputs.size() == 1);
    CHECK(m.inputs[0].first == f1);
    CHECK(m.inputs[0].second.size() == 16); // 64-bit hex
    CHECK(m.inputs[0].second != m.outputs[0].second);
    Manifest again;
    add_input(again, f1);
    CHECK(again.inputs[0].second == m.inputs[0].second);
    CHECK(file_digest(f1) != file_digest(f2));

    const std::string mpath = temp_file("pf_manifest.json");
    save_manifest(m, mpath);
    std::ifstream in(mpath);
    nlohmann::json j;
    in >> j;
    CHECK(j.at("command") == "unit-test");
    CHECK(j.at("tool") == "patchforge");
    CHECK(j.at("wall_time_s").get<double>() == 1.5);
    CHECK(j.at("inputs").size() == 1);
    CHECK(j.at("outputs")[0].at("digest").get<std::string>() == m.outputs[0].second);
    CHECK(j.at("config_hash").get<std::string>().size() == 16);
    RunConfig parsed = parse_config_text(j.at("config").get<std::string>());
    CHECK(config_hash(parsed) == config_hash(m.config));

    CHECK_THROWS_AS(add_input(m, mpath + ".missing"), Error);
    std::remove(f1.c_str());
    std::remove(f2.c_str());
    std::remove(mpath.c_str());
}
