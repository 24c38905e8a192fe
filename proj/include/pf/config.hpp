#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pf/attack.hpp"
#include "pf/detector.hpp"
#include "pf/scenegen.hpp"

namespace pf {

// One flat configuration for a whole run. The top-level seed feeds every
// seeded stage; attack/train carry no independent seed keys.
struct RunConfig {
    std::uint64_t seed = 7;
    SceneSpec scene = SceneSpec::defaults();
    DetectorConfig detector;
    AttackConfig attack;
    TrainOptions train;
};

// "key = value" lines, # comments, blank lines ignored. Keys mirror the
// field names (scene.image_size, detector.conv_widths, attack.loss, ...).
// Unknown keys are errors.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// PF_SEED, when set, replaces cfg.seed.
void apply_env_overrides(RunConfig& cfg);

// Every key in a fixed order with normalized number formatting; parsing it
// back reproduces the config exactly.
std::string canonical_text(const RunConfig& cfg);
std::uint64_t config_hash(const RunConfig& cfg);

// Seed propagation into the per-stage option structs.
AttackConfig attack_of(const RunConfig& cfg);
TrainOptions train_of(const RunConfig& cfg);

struct Manifest {
    std::string command;
    RunConfig config;
    std::vector<std::pair<std::string, std::string>> inputs;  // path, digest
    std::vector<std::pair<std::string, std::string>> outputs; // path, digest
    double wall_time_s = 0;
};

void add_input(Manifest& m, const std::string& path);
void add_output(Manifest& m, const std::string& path);
void save_manifest(const Manifest& m, const std::string& path);

} // namespace pf
