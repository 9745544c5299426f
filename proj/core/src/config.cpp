#include "dsr/config.h"

#include <fstream>

using json = nlohmann::json;

namespace dsr::cfg {

json default_config() {
  json j;
  j["preset"] = "default";
  j["synth"] = {{"count", 16}, {"seed", 0}, {"hr_w", 448}, {"hr_h", 320},
                {"camera_step", 0.15}};
  j["model"] = {
      {"teacher", {{"base_channels", 64}, {"res_blocks_per_stage", 4}}},
      {"student", {{"base_channels", 64}, {"res_blocks_per_stage", 2}}},
      {"depth_net", {{"unet_depth", 4}, {"base_channels", 32}}},
      {"match",
       {{"patch", 3}, {"block_w", 8}, {"block_h", 8}, {"stride", 1}, {"eps", 1e-12},
        {"coarse_search_stride", 1}}},
      {"critic_channels", 32},
      {"init_seed", 1}};
  j["train"] = {{"mode", "teacher-rec-dep"},
                {"lr0", 2e-4},
                {"eta_min", 1e-7},
                {"epochs", 250},
                {"batch_size", 1},
                {"steps", 0},
                {"seed", 0},
                {"grad_clip", 10.0},
                {"threads", 2},
                {"log_every", 1},
                {"checkpoint_every", 0},
                {"adm_embed", 16},
                {"weights",
                 {{"dep", 1.0}, {"rec", 1.0}, {"per", 0.01}, {"adv", 0.005}, {"g", 1.0},
                  {"d", 1.0}}},
                {"student_weights", {{"rec", 1.0}, {"kd", 0.5}, {"ad", 0.1}}}};
  j["eval"] = {{"depth_source", "network"}};
  return j;
}

json preset_patch(const std::string& name) {
  if (name == "default") return json::object();
  if (name == "toy") {
    // minutes-scale runs: 200 small samples, slim model, 2k steps
    json p;
    p["synth"] = {{"count", 200}, {"hr_w", 48}, {"hr_h", 32}};
    p["model"] = {{"teacher", {{"base_channels", 16}, {"res_blocks_per_stage", 4}}},
                  {"student", {{"base_channels", 16}, {"res_blocks_per_stage", 2}}},
                  {"depth_net", {{"unet_depth", 2}, {"base_channels", 16}}},
                  {"match", {{"block_w", 4}, {"block_h", 4}}},
                  {"critic_channels", 16}};
    p["train"] = {{"steps", 2000}, {"lr0", 1e-3}, {"adm_embed", 16}};
    return p;
  }
  if (name == "micro") {
    // minute-scale trend runs
    json p;
    p["synth"] = {{"count", 96}, {"hr_w", 48}, {"hr_h", 32}};
    p["model"] = {{"teacher", {{"base_channels", 12}, {"res_blocks_per_stage", 2}}},
                  {"student", {{"base_channels", 12}, {"res_blocks_per_stage", 1}}},
                  {"depth_net", {{"unet_depth", 2}, {"base_channels", 12}}},
                  {"match", {{"block_w", 4}, {"block_h", 4}}},
                  {"critic_channels", 12}};
    p["train"] = {{"steps", 800}, {"lr0", 1e-3}, {"adm_embed", 12}};
    return p;
  }
  throw ConfigError("unknown preset: " + name);
}

namespace {

void merge_checked(json& base, const json& patch, const std::string& path) {
  for (const auto& [key, value] : patch.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key: " + full);
    if (value.is_object() && base[key].is_object())
      merge_checked(base[key], value, full);
    else
      base[key] = value;
  }
}

json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);  // bare string
  }
}

void apply_override(json& base, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must be key=value, got: " + spec);
  const std::string path = spec.substr(0, eq);
  const json value = parse_override_value(spec.substr(eq + 1));

  json* node = &base;
  size_t begin = 0;
  std::vector<std::string> parts;
  while (true) {
    const auto dot = path.find('.', begin);
    parts.push_back(path.substr(begin, dot == std::string::npos ? dot : dot - begin));
    if (dot == std::string::npos) break;
    begin = dot + 1;
  }
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object())
      throw ConfigError("unknown config key: " + path);
    node = &(*node)[parts[i]];
  }
  if (!node->contains(parts.back())) throw ConfigError("unknown config key: " + path);
  (*node)[parts.back()] = value;
}

}  // namespace

json resolve(const std::string& config_path, const std::vector<std::string>& overrides) {
  json base = default_config();

  json file = json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config file: " + config_path);
    try {
      in >> file;
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config parse error: ") + e.what());
    }
  }

  // preset can come from the file or an override; apply it before the rest
  std::string preset = file.value("preset", std::string("default"));
  for (const auto& ov : overrides)
    if (ov.rfind("preset=", 0) == 0) preset = ov.substr(7);
  merge_checked(base, preset_patch(preset), "");
  base["preset"] = preset;

  merge_checked(base, file, "");
  base["preset"] = preset;
  for (const auto& ov : overrides) apply_override(base, ov);
  return base;
}

net::ModelConfig model_config(const json& root, bool student) {
  net::ModelConfig cfg;
  const json& m = root.at("model");
  const json& enc = student ? m.at("student") : m.at("teacher");
  cfg.encoder.base_channels = enc.at("base_channels");
  cfg.encoder.res_blocks_per_stage = enc.at("res_blocks_per_stage");
  cfg.depth_net.unet_depth = m.at("depth_net").at("unet_depth");
  cfg.depth_net.base_channels = m.at("depth_net").at("base_channels");
  cfg.match.patch = m.at("match").at("patch");
  cfg.match.block_w = m.at("match").at("block_w");
  cfg.match.block_h = m.at("match").at("block_h");
  cfg.match.stride = m.at("match").at("stride");
  cfg.match.eps = m.at("match").at("eps");
  cfg.match.coarse_search_stride = m.at("match").at("coarse_search_stride");
  cfg.critic_channels = m.at("critic_channels");
  cfg.init_seed = m.at("init_seed");
  cfg.validate();
  return cfg;
}

train::TrainConfig train_config(const json& root) {
  train::TrainConfig cfg;
  const json& t = root.at("train");
  cfg.mode = train::mode_from_string(t.at("mode"));
  cfg.lr0 = t.at("lr0");
  cfg.eta_min = t.at("eta_min");
  cfg.epochs = t.at("epochs");
  cfg.batch_size = t.at("batch_size");
  cfg.steps = t.at("steps");
  cfg.seed = t.at("seed");
  cfg.grad_clip = t.at("grad_clip");
  cfg.threads = t.at("threads");
  cfg.log_every = t.at("log_every");
  cfg.checkpoint_every = t.at("checkpoint_every");
  cfg.adm_embed = t.at("adm_embed");
  const json& w = t.at("weights");
  cfg.weights.dep = w.at("dep");
  cfg.weights.rec = w.at("rec");
  cfg.weights.per = w.at("per");
  cfg.weights.adv = w.at("adv");
  cfg.weights.g = w.at("g");
  cfg.weights.d = w.at("d");
  const json& sw = t.at("student_weights");
  cfg.student_weights.rec = sw.at("rec");
  cfg.student_weights.kd = sw.at("kd");
  cfg.student_weights.ad = sw.at("ad");
  cfg.validate();
  return cfg;
}

synth::SynthConfig synth_config(const json& root) {
  synth::SynthConfig cfg;
  const json& s = root.at("synth");
  cfg.count = s.at("count");
  cfg.seed = s.at("seed");
  cfg.hr_w = s.at("hr_w");
  cfg.hr_h = s.at("hr_h");
  cfg.camera_step = s.at("camera_step");
  return cfg;
}

}  // namespace dsr::cfg
