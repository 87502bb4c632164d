// xfedit command-line front end.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "xfedit/config.hpp"
#include "xfedit/errors.hpp"
#include "xfedit/hash.hpp"
#include "xfedit/io.hpp"
#include "xfedit/metrics.hpp"
#include "xfedit/pipeline.hpp"
#include "xfedit/toyworld.hpp"

#ifndef XFEDIT_VERSION
#define XFEDIT_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace xfedit;

namespace {

enum Exit : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,
  kMissingArtifact = 3,
  kInvalidInput = 4,
  kNumerical = 5,
};

constexpr const char* kExitTable =
    "Exit codes:\n"
    "  0  success\n"
    "  1  internal error\n"
    "  2  invalid configuration or arguments\n"
    "  3  missing or unreadable artifact (checkpoint, record, frames)\n"
    "  4  invalid input data (empty video, bad prompt, shape mismatch)\n"
    "  5  numerical failure (non-finite values)\n";

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Flag values that override the config file when given.
struct Overrides {
  std::string config_path;
  std::optional<std::string> checkpoint, video, record, output, dataset, original, edited;
  std::optional<std::string> source_prompt, target_prompt, modes;
  std::optional<std::uint64_t> seed;
  std::optional<int> train_steps, inner_steps, dataset_size;
  std::optional<double> tau_m, tau_null, guidance;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("-c,--config", o.config_path, "JSON run configuration");
  app->add_option("--out", o.output, "output directory");
  app->add_option("--seed", o.seed, "run seed");
}

std::vector<AttentionMode> parse_modes(const std::string& text) {
  std::vector<AttentionMode> modes;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      modes.push_back(attention_mode_from_string(item));
    } catch (const Error& e) {
      throw ConfigError(std::string("--modes: ") + e.what());
    }
  }
  return modes;
}

RunConfig effective_config(const Overrides& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  auto set = [](auto& dst, const auto& src) {
    if (src) dst = *src;
  };
  set(c.paths.checkpoint, o.checkpoint);
  set(c.paths.video, o.video);
  set(c.paths.record, o.record);
  set(c.paths.output, o.output);
  set(c.paths.dataset, o.dataset);
  set(c.paths.original, o.original);
  set(c.paths.edited, o.edited);
  set(c.source_prompt, o.source_prompt);
  set(c.edit.target_prompt, o.target_prompt);
  set(c.seed, o.seed);
  set(c.train.steps, o.train_steps);
  set(c.null_text.inner_steps, o.inner_steps);
  set(c.dataset_size, o.dataset_size);
  set(c.edit.tau_m, o.tau_m);
  set(c.edit.tau_null, o.tau_null);
  set(c.edit.guidance_scale, o.guidance);
  if (o.modes) c.attention_modes = parse_modes(*o.modes);
  if (c.paths.output.empty()) c.paths.output = "xfedit_out";
  c.validate();
  return c;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("no ") + what + " path configured");
  if (!fs::exists(path)) throw IoError(std::string(what) + " not found: " + path);
}

void require_nonempty(const std::string& s, const char* what) {
  if (s.empty()) throw ConfigError(std::string(what) + " is required");
}

/// Writes the effective config and run.manifest next to the outputs.
void write_run_files(const RunConfig& c, const std::string& command,
                     const std::optional<fs::path>& checkpoint) {
  const fs::path out = c.paths.output;
  const std::string cfg_text = dump_canonical(to_json(c));
  io::write_text(out / "config.json", cfg_text);
  Json manifest{{"command", command},
                {"config_hash", hex(fnv1a(cfg_text))},
                {"seed", c.seed},
                {"schedule_hash", hex(c.schedule.build().hash())},
                {"code_version", XFEDIT_VERSION}};
  if (checkpoint) manifest["checkpoint_hash"] = hex(io::file_hash(*checkpoint));
  io::write_text(out / "run.manifest", dump_canonical(manifest));
}

void write_report(const fs::path& path, const MetricReport& report) {
  io::write_text(path, dump_canonical(report.to_json()));
}

struct Loaded {
  std::shared_ptr<ToyUNet> unet;
  VideoUNet model;
  ToyTextEncoder encoder;
  Schedule schedule;
};

Loaded load_model(const RunConfig& c) {
  require_file(c.paths.checkpoint, "checkpoint");
  auto unet = io::load_checkpoint(c.paths.checkpoint);
  const auto& mc = unet->config();
  return {unet, VideoUNet(unet), ToyTextEncoder(mc.context_width, 8), c.schedule.build()};
}

std::vector<AttentionMode> modes_for(const RunConfig& c, const Loaded& m) {
  if (c.attention_modes.empty()) return m.model.default_modes();
  if (static_cast<int>(c.attention_modes.size()) != m.model.self_attention_layers())
    throw ConfigError("attention_modes does not match the checkpoint's layer count");
  return c.attention_modes;
}

Video original_unit(const InversionRecord& rec) { return clamp_unit(to_unit_range(rec.trajectory.front())); }

InversionRecord load_record(const RunConfig& c, const Schedule& schedule) {
  require_file(c.paths.record, "inversion record");
  InversionRecord rec = io::load_inversion(c.paths.record);
  rec.validate(schedule);
  return rec;
}

// Commands -------------------------------------------------------------------

int cmd_train(const RunConfig& c) {
  const fs::path ckpt =
      c.paths.checkpoint.empty() ? fs::path(c.paths.output) / "model.xfa" : fs::path(c.paths.checkpoint);
  ToyUNet model(c.model);
  const ToyTextEncoder encoder(c.model.context_width, 8);
  TrainConfig tc = c.train;
  const auto dataset = sample_dataset(static_cast<std::size_t>(c.dataset_size), c.dataset_seed,
                                      c.frames, c.image_size);
  const auto result = train_toy(model, dataset, encoder, c.schedule.build(), tc, [&](int s, float l) {
    if (s % 100 == 0) std::cerr << "step " << s << " loss " << l << "\n";
  });
  io::save_checkpoint(model, ckpt);
  io::write_text(fs::path(c.paths.output) / "loss_curve.json",
                 dump_canonical(Json(result.loss_curve)));
  write_run_files(c, "train-toy", ckpt);
  std::cout << "checkpoint " << ckpt.string() << " final loss " << result.loss_curve.back() << "\n";
  return kOk;
}

int cmd_make_dataset(const RunConfig& c) {
  const fs::path dir = c.paths.dataset.empty() ? fs::path(c.paths.output) / "dataset" : fs::path(c.paths.dataset);
  const auto specs = sample_dataset(static_cast<std::size_t>(c.dataset_size), c.dataset_seed,
                                    c.frames, c.image_size);
  Json entries = Json::array();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%04zu", i);
    const auto& s = specs[i];
    const auto scene = render_scene(s, c.dataset_seed + i);
    io::save_frames(scene.video, dir / name);
    entries.push_back({{"frames", std::string(name) + "/frames"},
                       {"prompt", scene.prompt},
                       {"spec",
                        {{"shape", to_string(s.shape)},
                         {"color", to_string(s.color)},
                         {"motion", to_string(s.motion)},
                         {"background", to_string(s.background)},
                         {"frames", s.frames},
                         {"image_size", s.image_size},
                         {"object_size", s.object_size},
                         {"start_x", s.start_x},
                         {"start_y", s.start_y},
                         {"speed", s.speed}}}});
  }
  io::write_text(dir / "dataset.json", dump_canonical(entries));
  write_run_files(c, "make-dataset", std::nullopt);
  std::cout << specs.size() << " clips in " << dir.string() << "\n";
  return kOk;
}

int cmd_render(const RunConfig& c) {
  require_nonempty(c.source_prompt, "--source-prompt");
  const auto spec = scene_from_prompt(c.source_prompt, c.frames, c.image_size);
  const auto scene = render_scene(spec, c.seed);
  const fs::path out = c.paths.output;
  io::save_frames(scene.video, out);
  Video mask_rgb(scene.mask.frames(), 3, scene.mask.height(), scene.mask.width());
  for (Index ch = 0; ch < 3; ++ch) mask_rgb.data().row(ch) = scene.mask.data().row(0);
  io::save_frames(mask_rgb, out / "mask");
  write_run_files(c, "render", std::nullopt);
  std::cout << scene.prompt << " -> " << out.string() << "\n";
  return kOk;
}

int cmd_invert(const RunConfig& c) {
  require_nonempty(c.source_prompt, "source_prompt");
  require_file(c.paths.video, "video");
  const Video video = io::load_frames(c.paths.video);
  auto m = load_model(c);
  if (video.height() != m.unet->config().image_size || video.width() != m.unet->config().image_size)
    throw InputError("video is " + video.shape_string() + ", model expects " +
                     std::to_string(m.unet->config().image_size) + " pixels square");
  const fs::path record =
      c.paths.record.empty() ? fs::path(c.paths.output) / "record" : fs::path(c.paths.record);
  const auto rec = invert_video(to_model_range(video), c.source_prompt,
                                m.encoder.encode(c.source_prompt), m.encoder.empty(), m.model,
                                m.schedule, c.null_text, modes_for(c, m));
  io::save_inversion(rec, record);
  write_run_files(c, "invert", fs::path(c.paths.checkpoint));
  std::cout << "record " << record.string() << " final loss " << rec.per_step_loss.back() << "\n";
  return kOk;
}

int cmd_reconstruct(const RunConfig& c) {
  auto m = load_model(c);
  const auto rec = load_record(c, m.schedule);
  const auto recon = reconstruct(rec, m.model, m.schedule, c.edit.guidance_scale, modes_for(c, m));
  const Video out = clamp_unit(to_unit_range(recon.video));
  io::save_frames(out, c.paths.output);
  MetricReport report;
  report.reconstruction = reconstruction_metrics(original_unit(rec), out);
  if (out.frames() >= 2)
    report.frame_consistency = frame_consistency(out, UNetFrameEncoder(m.unet, m.encoder.empty()));
  write_report(fs::path(c.paths.output) / "metrics.json", report);
  write_run_files(c, "reconstruct", fs::path(c.paths.checkpoint));
  std::cout << "reconstruction mse " << report.reconstruction->mse << "\n";
  return kOk;
}

int cmd_edit(const RunConfig& c) {
  require_nonempty(c.edit.target_prompt, "edit.target_prompt");
  auto m = load_model(c);
  const auto rec = load_record(c, m.schedule);
  const auto modes = modes_for(c, m);
  const auto recon = reconstruct(rec, m.model, m.schedule, c.edit.guidance_scale, modes);
  const EditPrompts prompts{m.encoder.encode(c.edit.target_prompt), m.encoder.empty()};
  const auto result = edit(rec, recon.maps, prompts, c.edit, m.model, m.schedule, modes);
  const Video out = clamp_unit(to_unit_range(result.edited_video));
  io::save_frames(out, c.paths.output);
  MetricReport report;
  report.reconstruction = reconstruction_metrics(original_unit(rec), out);
  if (out.frames() >= 2)
    report.frame_consistency = frame_consistency(out, UNetFrameEncoder(m.unet, m.encoder.empty()));
  write_report(fs::path(c.paths.output) / "metrics.json", report);
  write_run_files(c, "edit", fs::path(c.paths.checkpoint));
  std::cout << out.frames() << " edited frames in " << c.paths.output << "\n";
  return kOk;
}

int cmd_eval(const RunConfig& c, const std::string& mask_dir, const std::string& source_color,
             const std::string& target_color) {
  require_file(c.paths.original, "original frames");
  require_file(c.paths.edited, "edited frames");
  const Video original = io::load_frames(c.paths.original);
  const Video edited = io::load_frames(c.paths.edited);
  MetricReport report;
  report.reconstruction = reconstruction_metrics(original, edited);
  if (edited.frames() >= 2) {
    if (!c.paths.checkpoint.empty()) {
      require_file(c.paths.checkpoint, "checkpoint");
      auto unet = io::load_checkpoint(c.paths.checkpoint);
      const ToyTextEncoder enc(unet->config().context_width, 8);
      report.frame_consistency = frame_consistency(edited, UNetFrameEncoder(unet, enc.empty()));
    } else {
      report.frame_consistency = frame_consistency(
          edited, LinearFrameEncoder(edited.channels(), edited.height(), edited.width()));
    }
  }
  if (!mask_dir.empty()) {
    require_file(mask_dir, "mask frames");
    const Video mask_rgb = io::load_frames(mask_dir);
    Video mask(mask_rgb.frames(), 1, mask_rgb.height(), mask_rgb.width());
    mask.data().row(0) = mask_rgb.data().row(0);
    auto channel = [](const std::string& name) {
      for (Color col : {Color::Red, Color::Green, Color::Blue})
        if (to_string(col) == name) return color_channel(col);
      throw ConfigError("colour must be red, green or blue: " + name);
    };
    report.edit = edit_success(original, edited, mask, channel(source_color), channel(target_color));
  }
  const fs::path out = c.paths.output;
  write_report(out / "metrics.json", report);
  write_run_files(c, "eval", std::nullopt);
  std::cout << dump_canonical(report.to_json());
  return kOk;
}

/// One PNG per (timestep, layer, head): rows are prompt tokens, columns
/// frames, each cell normalised to its maximum.
int cmd_attn_export(const RunConfig& c, int every) {
  auto m = load_model(c);
  const auto rec = load_record(c, m.schedule);
  const auto recon = reconstruct(rec, m.model, m.schedule, c.edit.guidance_scale, modes_for(c, m));
  const auto ids = m.encoder.token_ids(rec.source_prompt);
  std::vector<Index> tokens;
  for (std::size_t l = 0; l < ids.size(); ++l)
    if (ids[l] != 0) tokens.push_back(static_cast<Index>(l));
  if (tokens.empty()) throw InputError("source prompt has no tokens to visualise");
  const fs::path out = fs::path(c.paths.output) / "attn";
  int written = 0;
  for (int k = 0; k < m.schedule.num_inference_steps(); k += std::max(1, every)) {
    const int t = m.schedule.inference_steps[static_cast<std::size_t>(k)];
    for (int layer = 0; layer < m.model.cross_attention_layers(); ++layer) {
      const LayerMap* map = recon.maps.find(t, layer);
      if (!map) continue;
      const Index side = static_cast<Index>(std::lround(std::sqrt(double(map->tokens))));
      for (Index h = 0; h < map->heads; ++h) {
        MatrixX<float> grid = MatrixX<float>::Zero(side * static_cast<Index>(tokens.size()),
                                                   side * map->frames);
        for (std::size_t r = 0; r < tokens.size(); ++r)
          for (Index f = 0; f < map->frames; ++f) {
            Eigen::VectorXf cell = map->block(f, h).col(tokens[r]);
            const float peak = cell.maxCoeff();
            if (peak > 0.0f) cell /= peak;
            for (Index p = 0; p < map->tokens; ++p)
              grid(static_cast<Index>(r) * side + p / side, f * side + p % side) = cell(p);
          }
        char name[64];
        std::snprintf(name, sizeof(name), "t%04d_layer%d_head%ld.png", t, layer, static_cast<long>(h));
        io::write_gray_png(out / name, grid);
        ++written;
      }
    }
  }
  write_run_files(c, "attn-export", fs::path(c.paths.checkpoint));
  std::cout << written << " attention grids in " << out.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training-free text-driven video editing on a toy diffusion model"};
  app.footer(kExitTable);
  app.require_subcommand(1);

  Overrides o;
  auto* train = app.add_subcommand("train-toy", "train the toy denoiser");
  add_common(train, o);
  train->add_option("--checkpoint", o.checkpoint, "checkpoint to write");
  train->add_option("--steps", o.train_steps, "training steps");
  train->add_option("--dataset-size", o.dataset_size, "number of sampled clips");

  auto* dataset = app.add_subcommand("make-dataset", "render the sampled toy dataset to PNG");
  add_common(dataset, o);
  dataset->add_option("--dataset", o.dataset, "dataset directory");
  dataset->add_option("--dataset-size", o.dataset_size, "number of clips");

  auto* render = app.add_subcommand("render", "render one clip (frames + mask) from a prompt");
  add_common(render, o);
  render->add_option("--prompt,--source-prompt", o.source_prompt, "e.g. 'a red square moving right on black'");

  auto* invert = app.add_subcommand("invert", "DDIM inversion + null-text optimisation");
  add_common(invert, o);
  invert->add_option("--checkpoint", o.checkpoint);
  invert->add_option("--video", o.video, "frame directory");
  invert->add_option("--record", o.record, "record directory to write");
  invert->add_option("--source-prompt", o.source_prompt);
  invert->add_option("--inner-steps", o.inner_steps);
  invert->add_option("--modes", o.modes, "comma-separated modes per self-attention layer");

  auto* recon = app.add_subcommand("reconstruct", "sample back from an inversion record");
  add_common(recon, o);
  recon->add_option("--checkpoint", o.checkpoint);
  recon->add_option("--record", o.record);
  recon->add_option("--guidance", o.guidance);
  recon->add_option("--modes", o.modes);

  auto* ed = app.add_subcommand("edit", "edit a video given its inversion record");
  add_common(ed, o);
  ed->add_option("--checkpoint", o.checkpoint);
  ed->add_option("--record", o.record);
  ed->add_option("--target-prompt", o.target_prompt);
  ed->add_option("--tau-m", o.tau_m);
  ed->add_option("--tau-null", o.tau_null);
  ed->add_option("--guidance", o.guidance);
  ed->add_option("--modes", o.modes);

  std::string mask_dir, source_color = "red", target_color = "blue";
  auto* ev = app.add_subcommand("eval", "metrics between two frame directories");
  add_common(ev, o);
  ev->add_option("--original", o.original);
  ev->add_option("--edited", o.edited);
  ev->add_option("--checkpoint", o.checkpoint, "use the model's frame encoder for consistency");
  ev->add_option("--mask", mask_dir, "mask frame directory for edit success");
  ev->add_option("--source-color", source_color);
  ev->add_option("--target-color", target_color);

  int every = 10;
  auto* attn = app.add_subcommand("attn-export", "write cross-attention map grids as PNG");
  add_common(attn, o);
  attn->add_option("--checkpoint", o.checkpoint);
  attn->add_option("--record", o.record);
  attn->add_option("--every", every, "export every n-th sampling step");
  attn->add_option("--modes", o.modes);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    const RunConfig c = effective_config(o);
    if (*train) return cmd_train(c);
    if (*dataset) return cmd_make_dataset(c);
    if (*render) return cmd_render(c);
    if (*invert) return cmd_invert(c);
    if (*recon) return cmd_reconstruct(c);
    if (*ed) return cmd_edit(c);
    if (*ev) return cmd_eval(c, mask_dir, source_color, target_color);
    if (*attn) return cmd_attn_export(c, every);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return kMissingArtifact;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const Error& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kInternal;
}
