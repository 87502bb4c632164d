#include "xfedit/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "xfedit/errors.hpp"

namespace xfedit {

namespace {

/// Reads known keys from one JSON object and rejects the rest.
class Fields {
 public:
  Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    const std::string at = where_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError(at + ": expected a boolean");
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!it->is_number_unsigned()) throw ConfigError(at + ": expected a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw ConfigError(at + ": expected an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ConfigError(at + ": expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw ConfigError(at + ": expected a string");
    }
    try {
      out = it->template get<T>();
    } catch (const Json::exception& e) {
      throw ConfigError(at + ": " + e.what());
    }
  }

  const Json* sub(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key()))
        throw ConfigError(where_ + ": unknown key '" + item.key() + "'");
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

Json to_json(const UNetConfig& c) {
  return Json{{"image_size", c.image_size},         {"image_channels", c.image_channels},
              {"widths", c.widths},                 {"heads", c.heads},
              {"norm_groups", c.norm_groups},       {"time_frequencies", c.time_frequencies},
              {"time_width", c.time_width},         {"context_width", c.context_width},
              {"seed", c.seed}};
}

UNetConfig unet_config_from_json(const Json& j) {
  UNetConfig c;
  Fields f(j, "model");
  f.get("image_size", c.image_size);
  f.get("image_channels", c.image_channels);
  if (const Json* w = f.sub("widths")) {
    if (!w->is_array()) throw ConfigError("model.widths: expected an array");
    c.widths.clear();
    for (const auto& v : *w) {
      if (!v.is_number_integer()) throw ConfigError("model.widths: expected integers");
      c.widths.push_back(v.get<Index>());
    }
  }
  f.get("heads", c.heads);
  f.get("norm_groups", c.norm_groups);
  f.get("time_frequencies", c.time_frequencies);
  f.get("time_width", c.time_width);
  f.get("context_width", c.context_width);
  f.get("seed", c.seed);
  f.finish();
  return c;
}

Json to_json(const RunConfig& c) {
  Json modes = Json::array();
  for (auto m : c.attention_modes) modes.push_back(to_string(m));
  return Json{
      {"paths",
       {{"dataset", c.paths.dataset},
        {"checkpoint", c.paths.checkpoint},
        {"video", c.paths.video},
        {"record", c.paths.record},
        {"output", c.paths.output},
        {"original", c.paths.original},
        {"edited", c.paths.edited}}},
      {"schedule",
       {{"train_steps", c.schedule.train_steps},
        {"beta_start", c.schedule.beta_start},
        {"beta_end", c.schedule.beta_end},
        {"inference_steps", c.schedule.inference_steps}}},
      {"model", to_json(c.model)},
      {"train",
       {{"steps", c.train.steps},
        {"batch", c.train.batch},
        {"lr", c.train.lr},
        {"warmup", c.train.warmup},
        {"cfg_dropout", c.train.cfg_dropout},
        {"grad_clip", c.train.grad_clip},
        {"seed", c.train.seed}}},
      {"dataset_size", c.dataset_size},
      {"dataset_seed", c.dataset_seed},
      {"frames", c.frames},
      {"image_size", c.image_size},
      {"source_prompt", c.source_prompt},
      {"edit",
       {{"target_prompt", c.edit.target_prompt},
        {"guidance_scale", c.edit.guidance_scale},
        {"num_steps", c.edit.num_steps},
        {"tau_m", c.edit.tau_m},
        {"tau_null", c.edit.tau_null},
        {"seed", c.edit.seed},
        {"inject_unconditional", c.edit.inject_unconditional}}},
      {"null_text",
       {{"inner_steps", c.null_text.inner_steps},
        {"step_size", c.null_text.step_size},
        {"guidance_scale", c.null_text.guidance_scale},
        {"early_stop", c.null_text.early_stop},
        {"max_halvings", c.null_text.max_halvings}}},
      {"attention_modes", modes},
      {"seed", c.seed},
  };
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  Fields top(j, "config");
  if (const Json* p = top.sub("paths")) {
    Fields f(*p, "paths");
    f.get("dataset", c.paths.dataset);
    f.get("checkpoint", c.paths.checkpoint);
    f.get("video", c.paths.video);
    f.get("record", c.paths.record);
    f.get("output", c.paths.output);
    f.get("original", c.paths.original);
    f.get("edited", c.paths.edited);
    f.finish();
  }
  if (const Json* s = top.sub("schedule")) {
    Fields f(*s, "schedule");
    f.get("train_steps", c.schedule.train_steps);
    f.get("beta_start", c.schedule.beta_start);
    f.get("beta_end", c.schedule.beta_end);
    f.get("inference_steps", c.schedule.inference_steps);
    f.finish();
  }
  if (const Json* m = top.sub("model")) c.model = unet_config_from_json(*m);
  if (const Json* t = top.sub("train")) {
    Fields f(*t, "train");
    f.get("steps", c.train.steps);
    f.get("batch", c.train.batch);
    f.get("lr", c.train.lr);
    f.get("warmup", c.train.warmup);
    f.get("cfg_dropout", c.train.cfg_dropout);
    f.get("grad_clip", c.train.grad_clip);
    f.get("seed", c.train.seed);
    f.finish();
  }
  top.get("dataset_size", c.dataset_size);
  top.get("dataset_seed", c.dataset_seed);
  top.get("frames", c.frames);
  top.get("image_size", c.image_size);
  top.get("source_prompt", c.source_prompt);
  if (const Json* e = top.sub("edit")) {
    Fields f(*e, "edit");
    f.get("target_prompt", c.edit.target_prompt);
    f.get("guidance_scale", c.edit.guidance_scale);
    f.get("num_steps", c.edit.num_steps);
    f.get("tau_m", c.edit.tau_m);
    f.get("tau_null", c.edit.tau_null);
    f.get("seed", c.edit.seed);
    f.get("inject_unconditional", c.edit.inject_unconditional);
    f.finish();
  }
  if (const Json* n = top.sub("null_text")) {
    Fields f(*n, "null_text");
    f.get("inner_steps", c.null_text.inner_steps);
    f.get("step_size", c.null_text.step_size);
    f.get("guidance_scale", c.null_text.guidance_scale);
    f.get("early_stop", c.null_text.early_stop);
    f.get("max_halvings", c.null_text.max_halvings);
    f.finish();
  }
  if (const Json* a = top.sub("attention_modes")) {
    if (!a->is_array()) throw ConfigError("attention_modes: expected an array");
    for (const auto& v : *a) {
      if (!v.is_string()) throw ConfigError("attention_modes: expected strings");
      try {
        c.attention_modes.push_back(attention_mode_from_string(v.get<std::string>()));
      } catch (const Error& e) {
        throw ConfigError(std::string("attention_modes: ") + e.what());
      }
    }
  }
  top.get("seed", c.seed);
  top.finish();
  return c;
}

void RunConfig::validate() const {
  model.validate();
  if (schedule.train_steps < 1 || schedule.inference_steps < 1 ||
      schedule.inference_steps > schedule.train_steps ||
      schedule.train_steps % schedule.inference_steps != 0)
    throw ConfigError("schedule: inference_steps must divide train_steps");
  if (!(schedule.beta_start > 0.0 && schedule.beta_start <= schedule.beta_end &&
        schedule.beta_end < 1.0))
    throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
  if (edit.num_steps != schedule.inference_steps)
    throw ConfigError("edit.num_steps must equal schedule.inference_steps");
  edit.validate();
  if (null_text.inner_steps < 1 || !(null_text.step_size > 0.0) || null_text.max_halvings < 0)
    throw ConfigError("null_text: need inner_steps >= 1, step_size > 0, max_halvings >= 0");
  if (train.steps < 1 || train.batch < 1 || !(train.lr > 0.0) || train.warmup < 0 ||
      !(train.cfg_dropout >= 0.0 && train.cfg_dropout <= 1.0))
    throw ConfigError("train: invalid hyperparameters");
  if (dataset_size < 1) throw ConfigError("dataset_size must be positive");
  if (frames < 1) throw ConfigError("frames must be positive");
  if (image_size != model.image_size) throw ConfigError("image_size must equal model.image_size");
  if (!attention_modes.empty() &&
      static_cast<int>(attention_modes.size()) != 2 * model.depth() + 1)
    throw ConfigError("attention_modes: need one mode per self-attention layer (" +
                      std::to_string(2 * model.depth() + 1) + ")");
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

std::string dump_canonical(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace xfedit
