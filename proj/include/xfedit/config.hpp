#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xfedit/attention.hpp"
#include "xfedit/inversion.hpp"
#include "xfedit/pipeline.hpp"
#include "xfedit/schedule.hpp"
#include "xfedit/toyworld.hpp"
#include "xfedit/unet.hpp"

namespace xfedit {

using Json = nlohmann::json;  // std::map objects: keys serialise sorted

struct ScheduleParams {
  int train_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  int inference_steps = 50;

  Schedule build() const { return make_schedule(train_steps, beta_start, beta_end, inference_steps); }
  bool operator==(const ScheduleParams&) const = default;
};

struct RunPaths {
  std::string dataset;     // dataset directory (make-dataset output)
  std::string checkpoint;  // model checkpoint file
  std::string video;       // input frame directory
  std::string record;      // inversion record directory
  std::string output;      // command output directory
  std::string original;    // eval: reference frame directory
  std::string edited;      // eval: edited frame directory
  bool operator==(const RunPaths&) const = default;
};

/// Everything a CLI command needs. Missing keys keep their defaults; unknown
/// keys are a ConfigError.
struct RunConfig {
  RunPaths paths;
  ScheduleParams schedule;
  UNetConfig model;
  TrainConfig train;
  int dataset_size = 512;
  std::uint64_t dataset_seed = 1;
  Index frames = 8;
  Index image_size = 32;
  std::string source_prompt;
  EditConfig edit;
  NullTextOptions null_text;
  std::vector<AttentionMode> attention_modes;  // empty: model default placement
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

Json to_json(const UNetConfig& c);
UNetConfig unet_config_from_json(const Json& j);
Json to_json(const RunConfig& c);
RunConfig run_config_from_json(const Json& j);

RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical text: sorted keys, two-space indent, trailing newline.
std::string dump_canonical(const Json& j);

}  // namespace xfedit
