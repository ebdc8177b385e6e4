#include "patchforge/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "patchforge/error.hpp"

namespace patchforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reads the members of one JSON object, rejecting keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorCategory::usage, "config key '" + label() + "' must be an object");
  }
  ~ObjectReader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw Error(ErrorCategory::usage, "unknown config key '" + child(key) + "'");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw Error(ErrorCategory::config, "config key '" + child(key) + "' has the wrong type");
    }
  }
  void get_path(const char* key, fs::path& out, const fs::path& base) {
    std::string s;
    get(key, s);
    if (j_.contains(key)) out = s.empty() ? fs::path() : resolve(s, base);
  }
  void get_range(const char* key, double& lo, double& hi) {
    std::vector<double> v;
    get(key, v);
    if (!j_.contains(key)) return;
    if (v.size() != 2) throw Error(ErrorCategory::config, "config key '" + child(key) + "' must be [lo, hi]");
    lo = v[0];
    hi = v[1];
  }
  bool has(const char* key) const { return j_.contains(key); }
  const json& sub(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  void require(const char* key) const {
    if (!j_.contains(key)) throw Error(ErrorCategory::usage, "missing config key '" + child(key) + "'");
  }

  static fs::path resolve(const std::string& s, const fs::path& base) {
    const fs::path p(s);
    return p.is_absolute() || base.empty() ? p : (base / p).lexically_normal();
  }

 private:
  std::string label() const { return path_.empty() ? "<root>" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json attack_json(const AttackConfig& c) {
  return json{
      {"weights", {{"alpha", c.weights.alpha}, {"beta", c.weights.beta}, {"gamma", c.weights.gamma}}},
      {"lr", c.lr},
      {"adam_beta1", c.adam_beta1},
      {"adam_beta2", c.adam_beta2},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"render",
       {{"scale", c.render.scale}, {"vertical_offset", c.render.vertical_offset}, {"person_class", c.render.person_class}}},
      {"eot",
       {{"rotation_deg", c.eot.rotation_deg},
        {"noise_amp", c.eot.noise_amp},
        {"contrast_range", {c.eot.contrast_lo, c.eot.contrast_hi}},
        {"brightness_amp", c.eot.brightness_amp},
        {"scale_jitter", {c.eot.scale_lo, c.eot.scale_hi}},
        {"rng_seed", c.eot.rng_seed}}},
      {"creases",
       {{"creases_min", c.creases.creases_min}, {"creases_max", c.creases.creases_max}, {"rng_seed", c.creases.rng_seed}}},
      {"patch_init", to_string(c.patch_init)},
      {"seed", c.seed},
  };
}

AttackConfig attack_from(const json& j, const std::string& path) {
  AttackConfig c;
  ObjectReader r(j, path);
  if (r.has("weights")) {
    ObjectReader w(r.sub("weights"), r.child("weights"));
    w.get("alpha", c.weights.alpha);
    w.get("beta", c.weights.beta);
    w.get("gamma", c.weights.gamma);
  }
  r.get("lr", c.lr);
  r.get("adam_beta1", c.adam_beta1);
  r.get("adam_beta2", c.adam_beta2);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  if (r.has("render")) {
    ObjectReader s(r.sub("render"), r.child("render"));
    s.get("scale", c.render.scale);
    s.get("vertical_offset", c.render.vertical_offset);
    s.get("person_class", c.render.person_class);
  }
  if (r.has("eot")) {
    ObjectReader e(r.sub("eot"), r.child("eot"));
    e.get("rotation_deg", c.eot.rotation_deg);
    e.get("noise_amp", c.eot.noise_amp);
    e.get_range("contrast_range", c.eot.contrast_lo, c.eot.contrast_hi);
    e.get("brightness_amp", c.eot.brightness_amp);
    e.get_range("scale_jitter", c.eot.scale_lo, c.eot.scale_hi);
    e.get("rng_seed", c.eot.rng_seed);
  }
  if (r.has("creases")) {
    ObjectReader k(r.sub("creases"), r.child("creases"));
    k.get("creases_min", c.creases.creases_min);
    k.get("creases_max", c.creases.creases_max);
    k.get("rng_seed", c.creases.rng_seed);
  }
  std::string init = to_string(c.patch_init);
  r.get("patch_init", init);
  c.patch_init = parse_patch_init(init);
  r.get("seed", c.seed);
  return c;
}

json parse_json(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCategory::config, "cannot parse " + origin + ": " + e.what());
  }
}

std::string path_string(const fs::path& p) { return p.string(); }

}  // namespace

bool AttackConfig::operator==(const AttackConfig& other) const { return attack_json(*this) == attack_json(other); }

std::string attack_config_to_json(const AttackConfig& cfg, int indent) { return attack_json(cfg).dump(indent); }

AttackConfig attack_config_from_json(const std::string& text) {
  AttackConfig c = attack_from(parse_json(text, "attack config"), "attack");
  c.validate();
  return c;
}

DetectorHandle DetectorSpec::handle() const { return DetectorHandle{name, person_class_index, conf_threshold, input_size}; }

fs::path DatasetSpec::images_dir() const { return split.empty() ? images : images / split; }

fs::path DatasetSpec::labels_dir() const {
  if (labels.empty()) return {};
  return split.empty() ? labels : labels / split;
}

RunConfig run_config_from_json(const std::string& text, const fs::path& base_dir) {
  const json root = parse_json(text, "run config");
  RunConfig cfg;
  {
    ObjectReader r(root, "");
    if (r.has("attack")) cfg.attack = attack_from(r.sub("attack"), "attack");
    r.require("detector");
    {
      ObjectReader d(r.sub("detector"), "detector");
      d.require("cfg");
      d.require("weights");
      d.get("name", cfg.detector.name);
      d.get_path("cfg", cfg.detector.cfg, base_dir);
      d.get_path("weights", cfg.detector.weights, base_dir);
      d.get_path("names", cfg.detector.names, base_dir);
      d.get("person_class_index", cfg.detector.person_class_index);
      d.get("conf_threshold", cfg.detector.conf_threshold);
      d.get("input_size", cfg.detector.input_size);
      d.get("iou_nms", cfg.detector.iou_nms);
    }
    r.require("dataset");
    {
      ObjectReader d(r.sub("dataset"), "dataset");
      d.get_path("images", cfg.dataset.images, base_dir);
      d.get_path("labels", cfg.dataset.labels, base_dir);
      d.get("split", cfg.dataset.split);
      if (d.has("synthetic")) {
        ObjectReader s(d.sub("synthetic"), "dataset.synthetic");
        s.require("count");
        s.get("count", cfg.dataset.synthetic_count);
        s.get("seed", cfg.dataset.synthetic_seed);
      }
      if (cfg.dataset.images.empty() && cfg.dataset.synthetic_count <= 0) {
        throw Error(ErrorCategory::usage, "missing config key 'dataset.images' (or 'dataset.synthetic')");
      }
    }
    r.require("guide_image");
    r.get_path("guide_image", cfg.guide_image, base_dir);
    r.get_path("output_dir", cfg.output_dir, base_dir);
  }
  cfg.attack.validate();
  cfg.attack.render.person_class = cfg.detector.person_class_index;
  return cfg;
}

std::string run_config_to_json(const RunConfig& c) {
  json dataset{{"images", path_string(c.dataset.images)},
               {"labels", path_string(c.dataset.labels)},
               {"split", c.dataset.split}};
  if (c.dataset.synthetic_count > 0) {
    dataset["synthetic"] = {{"count", c.dataset.synthetic_count}, {"seed", c.dataset.synthetic_seed}};
  }
  const json j{
      {"attack", attack_json(c.attack)},
      {"detector",
       {{"name", c.detector.name},
        {"cfg", path_string(c.detector.cfg)},
        {"weights", path_string(c.detector.weights)},
        {"names", path_string(c.detector.names)},
        {"person_class_index", c.detector.person_class_index},
        {"conf_threshold", c.detector.conf_threshold},
        {"input_size", c.detector.input_size},
        {"iou_nms", c.detector.iou_nms}}},
      {"dataset", dataset},
      {"guide_image", path_string(c.guide_image)},
      {"output_dir", path_string(c.output_dir)},
  };
  return j.dump(2);
}

void check_run_paths(const RunConfig& cfg) {
  auto need = [](const fs::path& p, const char* key) {
    if (!p.empty() && !fs::exists(p)) {
      throw Error(ErrorCategory::io, std::string("path for '") + key + "' does not exist: " + p.string());
    }
  };
  need(cfg.detector.cfg, "detector.cfg");
  need(cfg.detector.weights, "detector.weights");
  need(cfg.detector.names, "detector.names");
  if (!cfg.dataset.images.empty()) {
    need(cfg.dataset.images_dir(), "dataset.images");
    need(cfg.dataset.labels_dir(), "dataset.labels");
  }
  need(cfg.guide_image, "guide_image");
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::io, "cannot read config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg = run_config_from_json(ss.str(), fs::absolute(path).parent_path());
  check_run_paths(cfg);
  return cfg;
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorCategory::usage, "override '" + assignment + "' must look like key.path=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json root = json::parse(run_config_to_json(cfg));
  json* node = &root;
  std::istringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) path.push_back(part);
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    if (!node->is_object() || !node->contains(path[i])) {
      if (node->is_object() && path[i] == "synthetic") {
        (*node)[path[i]] = json::object();
      } else {
        throw Error(ErrorCategory::usage, "unknown config key '" + key + "'");
      }
    }
    node = &(*node)[path[i]];
  }
  if (!node->is_object()) throw Error(ErrorCategory::usage, "unknown config key '" + key + "'");
  (*node)[path.back()] = value;
  cfg = run_config_from_json(root.dump(), fs::current_path());
}

}  // namespace patchforge
