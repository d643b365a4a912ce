#include "par/config.hpp"

#include <cstdio>
#include <fstream>

namespace par {

namespace {

struct TrainDefaults {
  int epochs;
  ScheduleKind schedule;
  double start_lr;
  double mid_lr;
  double final_lr;
};

// Desk-scale rates: the from-scratch MLP encoders need far larger steps
// than fine-tuning a pretrained CLIP does, so these are the published
// schedule shapes with rescaled magnitudes (pinned by the pilot runs).
TrainDefaults mode_train_defaults(const std::string& mode) {
  if (mode == "poison") return {5, ScheduleKind::cosine, 1e-3, 0.0, 1e-5};
  if (mode == "clean_par") return {10, ScheduleKind::par_custom, 3e-3, 3e-4, 1e-7};
  if (mode == "clean_baseline") return {5, ScheduleKind::cosine, 2e-3, 0.0, 2e-5};
  throw ConfigError("config: unknown mode: " + mode);
}

nlohmann::json trigger_to_json(const TriggerSpec& t) {
  return {{"variant", to_string(t.variant)},
          {"patch_size", t.patch_size},
          {"blend_weight", t.blend_weight},
          {"triangle_side", t.triangle_side},
          {"text", t.text},
          {"glyph_height_frac", t.glyph_height_frac},
          {"pattern_seed", t.pattern_seed}};
}

// Copies user keys over defaults, rejecting keys the template lacks.
void merge_strict(nlohmann::json& base, const nlohmann::json& user, const std::string& path) {
  if (!user.is_object()) {
    throw ConfigError("config: expected an object at " + (path.empty() ? "top level" : path));
  }
  for (const auto& [key, value] : user.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("config: unknown key: " + where);
    if (base[key].is_object()) {
      merge_strict(base[key], value, where);
    } else {
      base[key] = value;
    }
  }
}

template <typename T>
T get_field(const nlohmann::json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: wrong type at " + path);
  }
}

}  // namespace

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["mode"] = cfg.mode;
  j["corpus_dir"] = cfg.corpus_dir;
  j["cache_dir"] = cfg.cache_dir;
  j["seed"] = cfg.seed;
  j["temperature"] = cfg.temperature;
  j["init_checkpoint"] = cfg.init_checkpoint;
  j["model"] = {{"image_size", cfg.model.image_size},
                {"patch_size", cfg.model.patch_size},
                {"d_h", cfg.model.d_h},
                {"d", cfg.model.d},
                {"max_len", cfg.model.max_len}};
  j["data"] = {{"n_train", cfg.data.n_train},
               {"n_clean", cfg.data.n_clean},
               {"n_eval", cfg.data.n_eval},
               {"stratified", cfg.data.stratified}};
  j["trigger"] = trigger_to_json(cfg.trigger);
  j["poison"] = {{"rate", cfg.poison.rate},
                 {"target_label", cfg.poison.target_label},
                 {"template_ids", cfg.poison.template_ids},
                 {"seed", cfg.poison.seed}};
  j["par"] = {{"tau", cfg.par.tau},
              {"noise_std", cfg.par.aug.noise_std},
              {"noise_prob", cfg.par.aug.noise_prob},
              {"cutout_area_min", cfg.par.aug.cutout_area_min},
              {"cutout_area_max", cfg.par.aug.cutout_area_max},
              {"cutout_prob", cfg.par.aug.cutout_prob}};
  j["cleanclip"] = {{"lambda", cfg.cleanclip.lambda},
                    {"hflip", cfg.cleanclip.aug.hflip},
                    {"color_jitter", cfg.cleanclip.aug.color_jitter},
                    {"uniform_noise", cfg.cleanclip.aug.uniform_noise},
                    {"crop_resize", cfg.cleanclip.aug.crop_resize},
                    {"token_delete", cfg.cleanclip.aug.token_delete},
                    {"token_swap", cfg.cleanclip.aug.token_swap}};
  j["train"] = {{"batch_size", cfg.train.batch_size},
                {"epochs", cfg.train.epochs},
                {"schedule", to_string(cfg.train.schedule)},
                {"start_lr", cfg.train.start_lr},
                {"mid_lr", cfg.train.mid_lr},
                {"final_lr", cfg.train.final_lr}};
  j["pretrain"] = {{"epochs", cfg.pretrain.epochs},
                   {"lr", cfg.pretrain.lr},
                   {"batch_size", cfg.pretrain.batch_size},
                   {"seed", cfg.pretrain.seed}};
  j["eval"] = {{"k", cfg.eval.k}, {"seed", cfg.eval.seed}};
  j["sweep"] = {{"taus", cfg.sweep.taus}, {"rates", cfg.sweep.rates}, {"seeds", cfg.sweep.seeds}};
  return j;
}

RunConfig parse_config(const nlohmann::json& user) {
  RunConfig defaults;
  const std::string mode =
      user.is_object() && user.contains("mode")
          ? get_field<std::string>(user.at("mode"), "mode")
          : defaults.mode;
  const TrainDefaults td = mode_train_defaults(mode);
  defaults.mode = mode;
  defaults.train.epochs = td.epochs;
  defaults.train.schedule = td.schedule;
  defaults.train.start_lr = td.start_lr;
  defaults.train.mid_lr = td.mid_lr;
  defaults.train.final_lr = td.final_lr;

  nlohmann::json merged = to_json(defaults);
  merge_strict(merged, user, "");

  RunConfig cfg;
  cfg.mode = get_field<std::string>(merged["mode"], "mode");
  cfg.corpus_dir = get_field<std::string>(merged["corpus_dir"], "corpus_dir");
  cfg.cache_dir = get_field<std::string>(merged["cache_dir"], "cache_dir");
  cfg.seed = get_field<std::uint64_t>(merged["seed"], "seed");
  cfg.temperature = get_field<std::string>(merged["temperature"], "temperature");
  cfg.init_checkpoint = get_field<std::string>(merged["init_checkpoint"], "init_checkpoint");

  const auto& jm = merged["model"];
  cfg.model.image_size = get_field<int>(jm["image_size"], "model.image_size");
  cfg.model.patch_size = get_field<int>(jm["patch_size"], "model.patch_size");
  cfg.model.d_h = get_field<int>(jm["d_h"], "model.d_h");
  cfg.model.d = get_field<int>(jm["d"], "model.d");
  cfg.model.max_len = get_field<int>(jm["max_len"], "model.max_len");

  const auto& jd = merged["data"];
  cfg.data.n_train = get_field<int>(jd["n_train"], "data.n_train");
  cfg.data.n_clean = get_field<int>(jd["n_clean"], "data.n_clean");
  cfg.data.n_eval = get_field<int>(jd["n_eval"], "data.n_eval");
  cfg.data.stratified = get_field<bool>(jd["stratified"], "data.stratified");

  const auto& jt = merged["trigger"];
  try {
    cfg.trigger.variant =
        trigger_variant_from_string(get_field<std::string>(jt["variant"], "trigger.variant"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: trigger.variant: ") + e.what());
  }
  cfg.trigger.patch_size = get_field<int>(jt["patch_size"], "trigger.patch_size");
  cfg.trigger.triangle_side = get_field<int>(jt["triangle_side"], "trigger.triangle_side");
  cfg.trigger.text = get_field<std::string>(jt["text"], "trigger.text");
  cfg.trigger.glyph_height_frac =
      get_field<double>(jt["glyph_height_frac"], "trigger.glyph_height_frac");
  cfg.trigger.pattern_seed = get_field<std::uint64_t>(jt["pattern_seed"], "trigger.pattern_seed");
  if (user.contains("trigger") && user["trigger"].is_object() &&
      user["trigger"].contains("variant") && !user["trigger"].contains("blend_weight")) {
    // A variant given without a weight takes that variant's canonical n_c.
    cfg.trigger.blend_weight = default_trigger_spec(cfg.trigger.variant).blend_weight;
  } else {
    cfg.trigger.blend_weight = get_field<double>(jt["blend_weight"], "trigger.blend_weight");
  }

  const auto& jp = merged["poison"];
  cfg.poison.rate = get_field<double>(jp["rate"], "poison.rate");
  cfg.poison.target_label = get_field<std::string>(jp["target_label"], "poison.target_label");
  cfg.poison.template_ids = get_field<std::vector<int>>(jp["template_ids"], "poison.template_ids");
  cfg.poison.seed = get_field<std::uint64_t>(jp["seed"], "poison.seed");
  cfg.poison.trigger = cfg.trigger;

  const auto& jpar = merged["par"];
  cfg.par.tau = get_field<double>(jpar["tau"], "par.tau");
  cfg.par.aug.noise_std = get_field<double>(jpar["noise_std"], "par.noise_std");
  cfg.par.aug.noise_prob = get_field<double>(jpar["noise_prob"], "par.noise_prob");
  cfg.par.aug.cutout_area_min = get_field<double>(jpar["cutout_area_min"], "par.cutout_area_min");
  cfg.par.aug.cutout_area_max = get_field<double>(jpar["cutout_area_max"], "par.cutout_area_max");
  cfg.par.aug.cutout_prob = get_field<double>(jpar["cutout_prob"], "par.cutout_prob");

  const auto& jc = merged["cleanclip"];
  cfg.cleanclip.lambda = get_field<double>(jc["lambda"], "cleanclip.lambda");
  cfg.cleanclip.aug.hflip = get_field<bool>(jc["hflip"], "cleanclip.hflip");
  cfg.cleanclip.aug.color_jitter = get_field<bool>(jc["color_jitter"], "cleanclip.color_jitter");
  cfg.cleanclip.aug.uniform_noise =
      get_field<bool>(jc["uniform_noise"], "cleanclip.uniform_noise");
  cfg.cleanclip.aug.crop_resize = get_field<bool>(jc["crop_resize"], "cleanclip.crop_resize");
  cfg.cleanclip.aug.token_delete = get_field<bool>(jc["token_delete"], "cleanclip.token_delete");
  cfg.cleanclip.aug.token_swap = get_field<bool>(jc["token_swap"], "cleanclip.token_swap");

  const auto& jtr = merged["train"];
  cfg.train.batch_size = get_field<int>(jtr["batch_size"], "train.batch_size");
  cfg.train.epochs = get_field<int>(jtr["epochs"], "train.epochs");
  try {
    cfg.train.schedule =
        schedule_kind_from_string(get_field<std::string>(jtr["schedule"], "train.schedule"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: train.schedule: ") + e.what());
  }
  cfg.train.start_lr = get_field<double>(jtr["start_lr"], "train.start_lr");
  cfg.train.mid_lr = get_field<double>(jtr["mid_lr"], "train.mid_lr");
  cfg.train.final_lr = get_field<double>(jtr["final_lr"], "train.final_lr");

  const auto& jpre = merged["pretrain"];
  cfg.pretrain.epochs = get_field<int>(jpre["epochs"], "pretrain.epochs");
  cfg.pretrain.lr = get_field<double>(jpre["lr"], "pretrain.lr");
  cfg.pretrain.batch_size = get_field<int>(jpre["batch_size"], "pretrain.batch_size");
  cfg.pretrain.seed = get_field<std::uint64_t>(jpre["seed"], "pretrain.seed");

  cfg.eval.k = get_field<int>(merged["eval"]["k"], "eval.k");
  cfg.eval.seed = get_field<std::uint64_t>(merged["eval"]["seed"], "eval.seed");

  cfg.sweep.taus = get_field<std::vector<double>>(merged["sweep"]["taus"], "sweep.taus");
  cfg.sweep.rates = get_field<std::vector<double>>(merged["sweep"]["rates"], "sweep.rates");
  cfg.sweep.seeds =
      get_field<std::vector<std::uint64_t>>(merged["sweep"]["seeds"], "sweep.seeds");

  if (cfg.cache_dir.empty()) cfg.cache_dir = cfg.corpus_dir + "/cache";

  // Value-range validation, reported with field paths.
  if (cfg.temperature != "learnable" && cfg.temperature != "fixed") {
    throw ConfigError("config: temperature must be \"learnable\" or \"fixed\"");
  }
  if (cfg.model.image_size < 16 || cfg.model.patch_size <= 0 ||
      cfg.model.image_size % cfg.model.patch_size != 0) {
    throw ConfigError("config: model.image_size must be >= 16 and a multiple of patch_size");
  }
  if (cfg.model.d_h <= 0 || cfg.model.d <= 0 || cfg.model.max_len <= 0) {
    throw ConfigError("config: model dimensions must be positive");
  }
  if (cfg.data.n_train < 1 || cfg.data.n_clean < 0 || cfg.data.n_eval < 0) {
    throw ConfigError("config: data split sizes out of range");
  }
  try {
    validate(cfg.trigger);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: trigger: ") + e.what());
  }
  if (cfg.poison.rate < 0.0 || cfg.poison.rate > 1.0) {
    throw ConfigError("config: poison.rate must be in [0,1]");
  }
  if (cfg.poison.template_ids.empty()) {
    throw ConfigError("config: poison.template_ids must be nonempty");
  }
  for (int id : cfg.poison.template_ids) {
    if (id < 0 || id >= static_cast<int>(caption_templates().size())) {
      throw ConfigError("config: poison.template_ids entry out of range: " + std::to_string(id));
    }
  }
  try {
    validate(cfg.par);
    validate(cfg.cleanclip);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (cfg.train.batch_size < 2) throw ConfigError("config: train.batch_size must be >= 2");
  if (cfg.train.epochs < 1) throw ConfigError("config: train.epochs must be >= 1");
  if (cfg.train.start_lr <= 0.0 || cfg.train.final_lr <= 0.0 ||
      (cfg.train.schedule == ScheduleKind::par_custom && cfg.train.mid_lr <= 0.0)) {
    throw ConfigError("config: train learning rates must be strictly positive");
  }
  if (cfg.pretrain.epochs < 0 || cfg.pretrain.lr <= 0.0 || cfg.pretrain.batch_size < 2) {
    throw ConfigError("config: pretrain settings out of range");
  }
  if (cfg.eval.k < 1) throw ConfigError("config: eval.k must be >= 1");
  if (cfg.sweep.taus.empty() || cfg.sweep.rates.empty()) {
    throw ConfigError("config: sweep grids must be nonempty");
  }
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

void apply_override(nlohmann::json& raw, const std::string& key_value) {
  const auto eq = key_value.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("config: override must look like key.path=value, got: " + key_value);
  }
  const std::string path = key_value.substr(0, eq);
  const std::string value = key_value.substr(eq + 1);

  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (const nlohmann::json::parse_error&) {
    parsed = value;  // bare strings stay strings
  }

  nlohmann::json* node = &raw;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty()) throw ConfigError("config: empty key segment in override: " + key_value);
    if (dot == std::string::npos) {
      (*node)[key] = parsed;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

std::string config_hash(const RunConfig& cfg) {
  const std::string canonical = to_json(cfg).dump();
  const std::uint64_t h = fnv1a64(canonical.data(), canonical.size());
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace par
