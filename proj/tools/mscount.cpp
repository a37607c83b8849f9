// mscount command-line front end: synth, tile, train, predict, evaluate, render.

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mscount/checkpoint.hpp"
#include "mscount/dataset.hpp"
#include "mscount/io_util.hpp"
#include "mscount/kv.hpp"
#include "mscount/localization.hpp"
#include "mscount/metrics.hpp"
#include "mscount/network.hpp"
#include "mscount/trainer.hpp"

namespace fs = std::filesystem;
using namespace mscount;

namespace {

// ------------------------------------------------------------------ config

KeyValues default_key_values() {
  KeyValues kv = NetworkConfig{}.to_key_values();
  for (auto& [k, v] : TrainConfig{}.to_key_values()) kv[k] = v;
  return kv;
}

std::string defaults_text() {
  std::string out = "Configuration keys (--config FILE, --set key=value) and defaults:\n";
  for (const auto& [k, v] : default_key_values()) out += "  " + k + " = " + v + "\n";
  out +=
      "net.stride is fixed at 8. train.tau and train.delta are the peak threshold and\n"
      "minimum peak separation (map pixels); train.match_radius is in map pixels.\n"
      "train.density_*_max = -1 selects count terciles of the evaluated set.\n";
  return out;
}

struct ConfigOptions {
  std::string config_file;
  std::vector<std::string> sets;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "Flat key=value configuration file");
    cmd->add_option("--set", sets, "Override one key, key=value (repeatable, wins over --config)");
  }

  /// Keys given explicitly, validated against the known key set.
  KeyValues explicit_values() const {
    KeyValues kv;
    if (!config_file.empty()) kv = load_key_values(config_file);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got " + s);
      auto trim = [](std::string x) {
        const auto b = x.find_first_not_of(" \t");
        const auto e = x.find_last_not_of(" \t");
        return b == std::string::npos ? std::string() : x.substr(b, e - b + 1);
      };
      kv[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
    }
    const KeyValues known = default_key_values();
    for (const auto& [k, v] : kv) {
      if (!known.count(k)) throw std::invalid_argument("unknown configuration key: " + k);
    }
    return kv;
  }
};

KeyValues merged(const KeyValues& base, const KeyValues& over) {
  KeyValues out = base;
  for (const auto& [k, v] : over) out[k] = v;
  return out;
}

// A trained model plus the configuration it was trained with.
struct LoadedModel {
  std::unique_ptr<Model> model;
  KeyValues config;
};

struct ModelOptions {
  std::string run_dir;
  std::string checkpoint;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--run", run_dir, "Run directory (config.txt + best.pkc)");
    cmd->add_option("--checkpoint", checkpoint,
                    "Checkpoint file; with --run defaults to RUN/best.pkc");
  }

  bool given() const { return !run_dir.empty() || !checkpoint.empty(); }

  LoadedModel load(const ConfigOptions& cfg) const {
    KeyValues kv = default_key_values();
    if (!run_dir.empty()) kv = merged(kv, load_key_values(fs::path(run_dir) / "config.txt"));
    kv = merged(kv, cfg.explicit_values());
    fs::path ckpt = checkpoint;
    if (ckpt.empty()) {
      if (run_dir.empty()) throw std::invalid_argument("need --run or --checkpoint");
      ckpt = fs::path(run_dir) / "best.pkc";
    }
    LoadedModel out;
    out.model = std::make_unique<Model>(NetworkConfig::from_key_values(kv), 0);
    NamedTensors dest = out.model->named_parameters();
    assign_checkpoint(load_checkpoint(ckpt), dest);
    out.config = std::move(kv);
    return out;
  }
};

std::array<double, 3> parse_fractions(const std::string& text) {
  std::array<double, 3> f{};
  std::stringstream ss(text);
  std::string part;
  int i = 0;
  while (std::getline(ss, part, ',')) {
    if (i >= 3) throw std::invalid_argument("--split expects three comma-separated fractions");
    f[static_cast<std::size_t>(i++)] = std::stod(part);
  }
  if (i != 3) throw std::invalid_argument("--split expects three comma-separated fractions");
  return f;
}

std::vector<const Sample*> pick_split(const std::vector<Sample>& samples, const std::string& which) {
  if (which == "all") {
    std::vector<const Sample*> out;
    for (const auto& s : samples) out.push_back(&s);
    return out;
  }
  return select_split(samples, parse_split(which));
}

std::string stem(const std::string& path) { return fs::path(path).stem().string(); }

// ---------------------------------------------------------- map CSV files

std::string map_to_csv(const ConfidenceMap& m) {
  std::string out;
  char buf[32];
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      std::snprintf(buf, sizeof(buf), "%s%.9g", x ? "," : "", m.at(y, x));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

ConfidenceMap map_from_csv(const fs::path& path, int stride) {
  ConfidenceMap m;
  m.stride = stride;
  std::stringstream ss(read_text_file(path));
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    int w = 0;
    while (std::getline(ls, cell, ',')) {
      m.values.push_back(std::stod(cell));
      ++w;
    }
    if (m.height == 0) m.width = w;
    if (w != m.width) throw std::runtime_error(path.string() + ": ragged map row");
    ++m.height;
  }
  if (m.height == 0) throw std::runtime_error(path.string() + ": empty map");
  return m;
}

// ---------------------------------------------------------------- drawing

void put(Raster& r, int x, int y, std::array<std::uint8_t, 3> rgb) {
  if (x < 0 || y < 0 || x >= r.width || y >= r.height) return;
  for (int c = 0; c < 3; ++c) r.at(x, y, c) = rgb[static_cast<std::size_t>(c)];
}

void draw_cross(Raster& r, int cx, int cy) {
  for (int d = -1; d <= 1; ++d) {
    put(r, cx + d, cy, {255, 0, 0});
    put(r, cx, cy + d, {255, 0, 0});
  }
}

void draw_circle(Raster& r, double cx, double cy, double radius) {
  const int steps = std::max(16, static_cast<int>(std::ceil(2 * M_PI * radius * 2)));
  for (int i = 0; i < steps; ++i) {
    const double a = 2 * M_PI * i / steps;
    put(r, static_cast<int>(std::lround(cx + radius * std::cos(a))),
        static_cast<int>(std::lround(cy + radius * std::sin(a))), {255, 255, 0});
  }
}

Raster map_layer(const ConfidenceMap& m, int width, int height, int stride) {
  Raster out(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int my = std::min(m.height - 1, y / stride);
      const int mx = std::min(m.width - 1, x / stride);
      const double v = std::clamp(m.at(my, mx), 0.0, 1.0);
      const auto g = static_cast<std::uint8_t>(std::lround(v * 255.0));
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = g;
    }
  }
  return out;
}

void print_report(const CountingReport& report, const ReportHeader& header,
                  const std::string& out_path) {
  std::cout << report_to_table(report, header);
  if (!out_path.empty()) {
    const std::string csv = report_to_csv(report, header);
    write_atomically(out_path, [&](std::ostream& o) { o << csv; });
  }
}

ReportHeader header_for(const TrainConfig& tc, int stride) {
  return {{"tau", format_double(tc.peaks.tau)},
          {"delta", format_double(tc.peaks.delta)},
          {"match_radius", format_double(tc.match_radius)},
          {"stride", std::to_string(stride)}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mscount: object counting with multi-stage confidence-map refinement"};
  app.footer(defaults_text());
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic disk-counting dataset");
  std::string synth_out;
  SynthSpec spec;
  spec.samples = 200;
  int fixed_count = -1;
  std::string synth_split = "0.7,0.1,0.2";
  std::uint64_t synth_split_seed = 1;
  synth->add_option("--out", synth_out, "Dataset directory to write")->required();
  synth->add_option("--n", spec.samples, "Number of samples")->capture_default_str();
  synth->add_option("--size", spec.image_size, "Image side in pixels")->capture_default_str();
  synth->add_option("--count", fixed_count, "Exact object count per image (overrides min/max)");
  synth->add_option("--count-min", spec.count_min, "Minimum objects per image")->capture_default_str();
  synth->add_option("--count-max", spec.count_max, "Maximum objects per image")->capture_default_str();
  synth->add_option("--seed", spec.seed, "Generator seed")->capture_default_str();
  synth->add_option("--split", synth_split, "train,val,test fractions")->capture_default_str();
  synth->add_option("--split-seed", synth_split_seed, "Split hash seed")->capture_default_str();

  // tile
  auto* tile_cmd = app.add_subcommand("tile", "Cut a large annotated raster into a dataset");
  std::string tile_image, tile_ann, tile_out, tile_split = "0.7,0.1,0.2";
  int tile_patch = 512;
  std::uint64_t tile_split_seed = 1;
  tile_cmd->add_option("--image", tile_image, "P6 raster")->required()->check(CLI::ExistingFile);
  tile_cmd->add_option("--annotations", tile_ann, "Annotation JSON")->required()->check(CLI::ExistingFile);
  tile_cmd->add_option("--out", tile_out, "Dataset directory to write")->required();
  tile_cmd->add_option("--patch", tile_patch, "Tile side in pixels")->capture_default_str();
  tile_cmd->add_option("--split", tile_split, "train,val,test fractions")->capture_default_str();
  tile_cmd->add_option("--split-seed", tile_split_seed, "Split hash seed")->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train on the train split, validating each epoch");
  std::string train_data, train_run;
  ConfigOptions train_cfg;
  train_cmd->add_option("--data", train_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--run", train_run, "Run directory to write")->required();
  train_cfg.add_to(train_cmd);

  // predict
  auto* predict = app.add_subcommand("predict", "Detect objects with a trained model");
  ModelOptions predict_model;
  ConfigOptions predict_cfg;
  std::string predict_data, predict_split = "test", predict_out, maps_dir;
  std::vector<std::string> predict_images;
  predict_model.add_to(predict);
  predict_cfg.add_to(predict);
  predict->add_option("--data", predict_data, "Dataset directory")->check(CLI::ExistingDirectory);
  predict->add_option("--split", predict_split, "train, val, test or all")->capture_default_str();
  predict->add_option("--image", predict_images, "P6 images (repeatable), instead of --data");
  predict->add_option("--out", predict_out, "Detections CSV to write")->required();
  predict->add_option("--maps", maps_dir, "Directory for final-stage confidence maps (CSV)");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Count and localization metrics on a split");
  ModelOptions eval_model;
  ConfigOptions eval_cfg;
  std::string eval_data, eval_split = "test", eval_dets, eval_out;
  eval_model.add_to(eval_cmd);
  eval_cfg.add_to(eval_cmd);
  eval_cmd->add_option("--data", eval_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--split", eval_split, "train, val, test or all")->capture_default_str();
  eval_cmd->add_option("--detections", eval_dets, "Detections CSV instead of a model")->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", eval_out, "Report CSV to write");

  // render
  auto* render = app.add_subcommand("render", "Draw detections or a confidence map as a P6 image");
  std::string render_image, render_out, render_dets, render_id, render_map;
  int render_stride = 8;
  double render_circle = 0.0;
  render->add_option("--image", render_image, "P6 image")->required()->check(CLI::ExistingFile);
  render->add_option("--out", render_out, "P6 image to write")->required();
  render->add_option("--detections", render_dets, "Detections CSV (red 3x3 crosses)")->check(CLI::ExistingFile);
  render->add_option("--id", render_id, "Image id in the CSV (default: image file stem)");
  render->add_option("--map", render_map, "Confidence map CSV, drawn as the grayscale base layer")
      ->check(CLI::ExistingFile);
  render->add_option("--stride", render_stride, "Map-to-image stride")->capture_default_str();
  render->add_option("--circle-radius", render_circle,
                     "Yellow circle of this radius (map pixels) around each detection, 0 = none")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) {
      if (fixed_count >= 0) spec.count_min = spec.count_max = fixed_count;
      auto samples = synthesize(spec);
      split(samples, parse_fractions(synth_split), synth_split_seed);
      save_dataset(synth_out, samples);
      std::cout << "wrote " << samples.size() << " samples to " << synth_out << "\n";
    } else if (*tile_cmd) {
      const Raster raster = read_ppm(tile_image);
      const auto records = load_annotations(tile_ann);
      const AnnotationRecord* rec = nullptr;
      for (const auto& r : records) {
        if (fs::path(r.image_path).filename() == fs::path(tile_image).filename()) rec = &r;
      }
      if (!rec && records.size() == 1) rec = &records[0];
      if (!rec) throw std::invalid_argument("no annotation record for " + tile_image);
      if (rec->width != raster.width || rec->height != raster.height) {
        throw std::invalid_argument("annotation size does not match the raster");
      }
      auto samples = tile(raster, rec->point_set(), tile_patch, stem(tile_image));
      assign_density_terciles(samples);
      split(samples, parse_fractions(tile_split), tile_split_seed);
      save_dataset(tile_out, samples);
      std::cout << "wrote " << samples.size() << " tiles to " << tile_out << "\n";
    } else if (*train_cmd) {
      const auto samples = load_dataset(train_data);
      KeyValues given = train_cfg.explicit_values();
      if (!given.count("net.input_size") && !samples.empty()) {
        given["net.input_size"] = std::to_string(samples.front().image.width);
      }
      const KeyValues kv = merged(default_key_values(), given);
      const NetworkConfig net = NetworkConfig::from_key_values(kv);
      const TrainConfig tc = TrainConfig::from_key_values(kv);
      Model model(net, tc.seed);
      const auto result = train(model, select_split(samples, Split::Train),
                                select_split(samples, Split::Val), tc, fs::path(train_run));
      if (result.log.diverged) {
        std::cerr << "training diverged; best parameters kept in " << train_run << "\n";
        return 2;
      }
      const auto& best = result.log.epochs.at(static_cast<std::size_t>(result.log.best_epoch - 1));
      std::printf("best epoch %d: val MAE %.4f F-measure %.4f\n", best.epoch, best.val_mae,
                  best.val_f_measure);
    } else if (*predict) {
      const LoadedModel lm = predict_model.load(predict_cfg);
      const TrainConfig tc = TrainConfig::from_key_values(lm.config);
      std::vector<std::pair<std::string, Raster>> inputs;
      std::vector<Sample> dataset;
      if (!predict_data.empty()) {
        dataset = load_dataset(predict_data);
        for (const Sample* s : pick_split(dataset, predict_split)) {
          inputs.emplace_back(s->id, s->image);
        }
      }
      for (const auto& p : predict_images) inputs.emplace_back(stem(p), read_ppm(p));
      if (inputs.empty()) throw std::invalid_argument("no input images (use --data or --image)");
      if (!maps_dir.empty()) fs::create_directories(maps_dir);
      std::vector<ImageDetections> all;
      const int stride = lm.model->config().stride;
      for (const auto& [id, raster] : inputs) {
        const ConfidenceMap map = predict_maps(*lm.model, {&raster}).front();
        all.push_back({id, to_image_space(find_peaks(map, tc.peaks), stride)});
        if (!maps_dir.empty()) {
          const std::string text = map_to_csv(map);
          write_atomically(fs::path(maps_dir) / (id + ".csv"),
                           [&](std::ostream& o) { o << text; });
        }
      }
      save_detections_csv(predict_out, all);
      std::size_t n = 0;
      for (const auto& a : all) n += a.detections.size();
      std::cout << "wrote " << n << " detections for " << all.size() << " images to "
                << predict_out << "\n";
    } else if (*eval_cmd) {
      const auto samples = load_dataset(eval_data);
      const auto chosen = pick_split(samples, eval_split);
      if (eval_model.given() == !eval_dets.empty()) {
        throw std::invalid_argument("give either --detections or --run/--checkpoint");
      }
      if (!eval_dets.empty()) {
        const KeyValues kv = merged(default_key_values(), eval_cfg.explicit_values());
        const TrainConfig tc = TrainConfig::from_key_values(kv);
        const int stride = kv_int(kv, "net.stride");
        const auto ev = evaluate_detections(chosen, load_detections_csv(eval_dets), stride, tc);
        print_report(ev.report, header_for(tc, stride), eval_out);
      } else {
        const LoadedModel lm = eval_model.load(eval_cfg);
        const TrainConfig tc = TrainConfig::from_key_values(lm.config);
        const auto ev = evaluate(*lm.model, chosen, tc);
        print_report(ev.report, header_for(tc, lm.model->config().stride), eval_out);
      }
    } else if (*render) {
      if (render_stride < 1) throw std::invalid_argument("--stride must be positive");
      Raster canvas = read_ppm(render_image);
      if (!render_map.empty()) {
        canvas = map_layer(map_from_csv(render_map, render_stride), canvas.width, canvas.height,
                           render_stride);
      }
      if (!render_dets.empty()) {
        const std::string id = render_id.empty() ? stem(render_image) : render_id;
        for (const auto& img : load_detections_csv(render_dets)) {
          if (img.image_id != id) continue;
          for (const auto& d : img.detections) {
            if (render_circle > 0) {
              draw_circle(canvas, d.image_position.x, d.image_position.y,
                          render_circle * render_stride);
            }
            draw_cross(canvas, static_cast<int>(std::lround(d.image_position.x)),
                       static_cast<int>(std::lround(d.image_position.y)));
          }
        }
      }
      write_ppm(render_out, canvas);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
