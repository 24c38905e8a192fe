#include "pf/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pf/image_io.hpp"

namespace pf {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double to_double(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw Error("config key " + key + ": bad number '" + v + "'");
    }
}

int to_int(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        int n = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw Error("config key " + key + ": bad integer '" + v + "'");
    }
}

std::uint64_t to_u64(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        std::uint64_t n = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw Error("config key " + key + ": bad unsigned integer '" + v + "'");
    }
}

bool to_bool(const std::string& v, const std::string& key) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw Error("config key " + key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            parts.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    parts.push_back(trim(cur));
    if (parts.size() == 1 && parts[0].empty()) parts.clear();
    return parts;
}

std::vector<int> to_int_list(const std::string& v, const std::string& key) {
    std::vector<int> out;
    for (const auto& p : split(v, ',')) out.push_back(to_int(p, key));
    return out;
}

std::string fmt_double(double v) {
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

std::string fmt_int_list(const std::vector<int>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(xs[i]);
    }
    return s;
}

std::string fmt_palette(const std::vector<std::array<double, 3>>& palette) {
    std::string s;
    for (std::size_t i = 0; i < palette.size(); ++i) {
        if (i) s += ";";
        s += fmt_double(palette[i][0]) + "," + fmt_double(palette[i][1]) + "," +
             fmt_double(palette[i][2]);
    }
    return s;
}

std::vector<std::array<double, 3>> parse_palette(const std::string& v, const std::string& key) {
    std::vector<std::array<double, 3>> out;
    for (const auto& entry : split(v, ';')) {
        auto parts = split(entry, ',');
        if (parts.size() != 3) throw Error("config key " + key + ": expected r,g,b triples");
        out.push_back({to_double(parts[0], key), to_double(parts[1], key),
                       to_double(parts[2], key)});
    }
    return out;
}

std::string fmt_screens(const std::vector<ScreenSlot>& screens) {
    std::string s;
    for (std::size_t i = 0; i < screens.size(); ++i) {
        const ScreenSlot& sc = screens[i];
        if (i) s += ";";
        s += std::to_string(sc.id) + ":" + face_name(sc.face) + ":" + fmt_double(sc.off_u) +
             ":" + fmt_double(sc.off_v) + ":" + fmt_double(sc.width) + ":" +
             fmt_double(sc.height);
    }
    return s;
}

std::vector<ScreenSlot> parse_screens(const std::string& v, const std::string& key) {
    std::vector<ScreenSlot> out;
    for (const auto& entry : split(v, ';')) {
        auto parts = split(entry, ':');
        if (parts.size() != 6)
            throw Error("config key " + key + ": expected id:face:off_u:off_v:width:height");
        ScreenSlot sc;
        sc.id = to_int(parts[0], key);
        sc.face = face_from_name(parts[1]);
        sc.off_u = to_double(parts[2], key);
        sc.off_v = to_double(parts[3], key);
        sc.width = to_double(parts[4], key);
        sc.height = to_double(parts[5], key);
        out.push_back(sc);
    }
    return out;
}

} // namespace

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    SceneSpec& s = cfg.scene;
    DetectorConfig& d = cfg.detector;
    AttackConfig& a = cfg.attack;
    TrainOptions& t = cfg.train;

    if (key == "seed") cfg.seed = to_u64(value, key);

    else if (key == "scene.image_size") s.image_size = to_int(value, key);
    else if (key == "scene.class_count") s.class_count = to_int(value, key);
    else if (key == "scene.target_class") s.target_class = to_int(value, key);
    else if (key == "scene.palette") s.palette = parse_palette(value, key);
    else if (key == "scene.screens") s.screens = parse_screens(value, key);
    else if (key == "scene.camera_distance") s.camera_distance = to_double(value, key);
    else if (key == "scene.camera_height") s.camera_height = to_double(value, key);
    else if (key == "scene.focal_scale") s.focal_scale = to_double(value, key);
    else if (key == "scene.angle_min") s.angle_min = to_double(value, key);
    else if (key == "scene.angle_max") s.angle_max = to_double(value, key);
    else if (key == "scene.frames_per_degree") s.frames_per_degree = to_double(value, key);
    else if (key == "scene.angle_jitter") s.angle_jitter = to_double(value, key);
    else if (key == "scene.brightness_jitter") s.brightness_jitter = to_double(value, key);
    else if (key == "scene.background_jitter") s.background_jitter = to_double(value, key);
    else if (key == "scene.screen_scale_jitter") s.screen_scale_jitter = to_double(value, key);
    else if (key == "scene.pixel_noise") s.pixel_noise = to_double(value, key);
    else if (key == "scene.target_fraction") s.target_fraction = to_double(value, key);
    else if (key == "scene.gradient_background") s.gradient_background = to_bool(value, key);

    else if (key == "detector.grid_size") d.grid_size = to_int(value, key);
    else if (key == "detector.boxes_per_cell") d.boxes_per_cell = to_int(value, key);
    else if (key == "detector.class_count") d.class_count = to_int(value, key);
    else if (key == "detector.input_size") d.input_size = to_int(value, key);
    else if (key == "detector.conv_widths") d.conv_widths = to_int_list(value, key);
    else if (key == "detector.kernel_size") d.kernel_size = to_int(value, key);
    else if (key == "detector.detect_threshold") d.detect_threshold = to_double(value, key);
    else if (key == "detector.nms_iou") d.nms_iou = to_double(value, key);

    else if (key == "attack.loss") a.loss = loss_kind_from_name(value);
    else if (key == "attack.target_class") a.target_class = to_int(value, key);
    else if (key == "attack.semantic_classes") a.semantic_classes = to_int_list(value, key);
    else if (key == "attack.semantic_base") a.semantic_base = loss_kind_from_name(value);
    else if (key == "attack.alpha") a.alpha = to_double(value, key);
    else if (key == "attack.lr") a.lr = to_double(value, key);
    else if (key == "attack.epochs") a.epochs = to_int(value, key);
    else if (key == "attack.batch_size") a.batch_size = to_int(value, key);
    else if (key == "attack.patch_size") a.patch_size = to_int(value, key);
    else if (key == "attack.transforms.brightness") a.transforms.brightness = to_double(value, key);
    else if (key == "attack.transforms.contrast_lo") a.transforms.contrast_lo = to_double(value, key);
    else if (key == "attack.transforms.contrast_hi") a.transforms.contrast_hi = to_double(value, key);
    else if (key == "attack.transforms.noise") a.transforms.noise = to_double(value, key);

    else if (key == "train.epochs") t.epochs = to_int(value, key);
    else if (key == "train.lr") t.lr = to_double(value, key);
    else if (key == "train.batch_size") t.batch_size = to_int(value, key);
    else if (key == "train.lambda_coord") t.lambda_coord = to_double(value, key);
    else if (key == "train.lambda_noobj") t.lambda_noobj = to_double(value, key);
    else if (key == "train.lambda_cls") t.lambda_cls = to_double(value, key);
    else if (key == "train.lambda_bg_cls") t.lambda_bg_cls = to_double(value, key);
    else if (key == "train.target_class") t.target_class = to_int(value, key);
    else if (key == "train.clean_threshold") t.clean_threshold = to_double(value, key);
    else if (key == "train.min_iou") t.min_iou = to_double(value, key);
    else if (key == "train.heldout_every") t.heldout_every = to_int(value, key);
    else if (key == "train.stop_when_clean") t.stop_when_clean = to_bool(value, key);

    else throw Error("unknown config key: " + key);
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw Error("config line " + std::to_string(lineno) + ": expected key = value");
        apply_override(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

void apply_env_overrides(RunConfig& cfg) {
    if (const char* v = std::getenv("PF_SEED")) cfg.seed = to_u64(v, "PF_SEED");
}

std::string canonical_text(const RunConfig& cfg) {
    const SceneSpec& s = cfg.scene;
    const DetectorConfig& d = cfg.detector;
    const AttackConfig& a = cfg.attack;
    const TrainOptions& t = cfg.train;

    std::ostringstream out;
    auto put = [&](const std::string& key, const std::string& value) {
        out << key << " = " << value << "\n";
    };
    put("seed", std::to_string(cfg.seed));

    put("scene.image_size", std::to_string(s.image_size));
    put("scene.class_count", std::to_string(s.class_count));
    put("scene.target_class", std::to_string(s.target_class));
    put("scene.palette", fmt_palette(s.palette));
    put("scene.screens", fmt_screens(s.screens));
    put("scene.camera_distance", fmt_double(s.camera_distance));
    put("scene.camera_height", fmt_double(s.camera_height));
    put("scene.focal_scale", fmt_double(s.focal_scale));
    put("scene.angle_min", fmt_double(s.angle_min));
    put("scene.angle_max", fmt_double(s.angle_max));
    put("scene.frames_per_degree", fmt_double(s.frames_per_degree));
    put("scene.angle_jitter", fmt_double(s.angle_jitter));
    put("scene.brightness_jitter", fmt_double(s.brightness_jitter));
    put("scene.background_jitter", fmt_double(s.background_jitter));
    put("scene.screen_scale_jitter", fmt_double(s.screen_scale_jitter));
    put("scene.pixel_noise", fmt_double(s.pixel_noise));
    put("scene.target_fraction", fmt_double(s.target_fraction));
    put("scene.gradient_background", s.gradient_background ? "true" : "false");

    put("detector.grid_size", std::to_string(d.grid_size));
    put("detector.boxes_per_cell", std::to_string(d.boxes_per_cell));
    put("detector.class_count", std::to_string(d.class_count));
    put("detector.input_size", std::to_string(d.input_size));
    put("detector.conv_widths", fmt_int_list(d.conv_widths));
    put("detector.kernel_size", std::to_string(d.kernel_size));
    put("detector.detect_threshold", fmt_double(d.detect_threshold));
    put("detector.nms_iou", fmt_double(d.nms_iou));

    put("attack.loss", loss_kind_name(a.loss));
    put("attack.target_class", std::to_string(a.target_class));
    put("attack.semantic_classes", fmt_int_list(a.semantic_classes));
    put("attack.semantic_base", loss_kind_name(a.semantic_base));
    put("attack.alpha", fmt_double(a.alpha));
    put("attack.lr", fmt_double(a.lr));
    put("attack.epochs", std::to_string(a.epochs));
    put("attack.batch_size", std::to_string(a.batch_size));
    put("attack.patch_size", std::to_string(a.patch_size));
    put("attack.transforms.brightness", fmt_double(a.transforms.brightness));
    put("attack.transforms.contrast_lo", fmt_double(a.transforms.contrast_lo));
    put("attack.transforms.contrast_hi", fmt_double(a.transforms.contrast_hi));
    put("attack.transforms.noise", fmt_double(a.transforms.noise));

    put("train.epochs", std::to_string(t.epochs));
    put("train.lr", fmt_double(t.lr));
    put("train.batch_size", std::to_string(t.batch_size));
    put("train.lambda_coord", fmt_double(t.lambda_coord));
    put("train.lambda_noobj", fmt_double(t.lambda_noobj));
    put("train.lambda_cls", fmt_double(t.lambda_cls));
    put("train.lambda_bg_cls", fmt_double(t.lambda_bg_cls));
    put("train.target_class", std::to_string(t.target_class));
    put("train.clean_threshold", fmt_double(t.clean_threshold));
    put("train.min_iou", fmt_double(t.min_iou));
    put("train.heldout_every", std::to_string(t.heldout_every));
    put("train.stop_when_clean", t.stop_when_clean ? "true" : "false");
    return out.str();
}

std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a64(canonical_text(cfg)); }

AttackConfig attack_of(const RunConfig& cfg) {
    AttackConfig a = cfg.attack;
    a.seed = cfg.seed;
    return a;
}

TrainOptions train_of(const RunConfig& cfg) {
    TrainOptions t = cfg.train;
    t.seed = cfg.seed;
    return t;
}

namespace {
std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}
} // namespace

void add_input(Manifest& m, const std::string& path) {
    m.inputs.emplace_back(path, hex64(file_digest(path)));
}

void add_output(Manifest& m, const std::string& path) {
    m.outputs.emplace_back(path, hex64(file_digest(path)));
}

void save_manifest(const Manifest& m, const std::string& path) {
    nlohmann::json j;
    j["tool"] = kToolName;
    j["version"] = kToolVersion;
    j["command"] = m.command;
    j["seed"] = m.config.seed;
    j["config_hash"] = hex64(config_hash(m.config));
    j["config"] = canonical_text(m.config);
    auto files = nlohmann::json::array();
    for (const auto& [p, digest] : m.inputs) files.push_back({{"path", p}, {"digest", digest}});
    j["inputs"] = files;
    files = nlohmann::json::array();
    for (const auto& [p, digest] : m.outputs) files.push_back({{"path", p}, {"digest", digest}});
    j["outputs"] = files;
    j["wall_time_s"] = m.wall_time_s;
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << j.dump(2) << "\n";
}

} // namespace pf
