#include "mscount/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "mscount/io_util.hpp"
#include "mscount/optim.hpp"
#include "mscount/rng.hpp"

namespace mscount {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (!(learning_rate >= 0.0)) fail("learning_rate must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (epochs < 1) fail("epochs must be at least 1");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (!(sigma_min > 0.0) || sigma_max < sigma_min) fail("need sigma_max >= sigma_min > 0");
  if (!(match_radius >= 0.0)) fail("match_radius must be non-negative");
  if (checkpoint_every < 0) fail("checkpoint_every must be non-negative");
  if ((density_low_max < 0) != (density_medium_max < 0)) {
    fail("set both density boundaries or neither");
  }
  if (density_low_max >= 0 && density_low_max > density_medium_max) {
    fail("density boundaries must be ascending");
  }
  peaks.validate();
}

SigmaSchedule TrainConfig::schedule(int stages) const {
  return SigmaSchedule::make(stages, sigma_max, sigma_min);
}

KeyValues TrainConfig::to_key_values() const {
  return {
      {"train.learning_rate", format_double(learning_rate)},
      {"train.momentum", format_double(momentum)},
      {"train.epochs", std::to_string(epochs)},
      {"train.batch_size", std::to_string(batch_size)},
      {"train.sigma_max", format_double(sigma_max)},
      {"train.sigma_min", format_double(sigma_min)},
      {"train.tau", format_double(peaks.tau)},
      {"train.delta", format_double(peaks.delta)},
      {"train.match_radius", format_double(match_radius)},
      {"train.seed", std::to_string(seed)},
      {"train.checkpoint_every", std::to_string(checkpoint_every)},
      {"train.density_low_max", std::to_string(density_low_max)},
      {"train.density_medium_max", std::to_string(density_medium_max)},
  };
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
  TrainConfig c;
  auto has = [&](const char* k) { return kv.count(k) > 0; };
  if (has("train.learning_rate")) c.learning_rate = kv_double(kv, "train.learning_rate");
  if (has("train.momentum")) c.momentum = kv_double(kv, "train.momentum");
  if (has("train.epochs")) c.epochs = kv_int(kv, "train.epochs");
  if (has("train.batch_size")) c.batch_size = kv_int(kv, "train.batch_size");
  if (has("train.sigma_max")) c.sigma_max = kv_double(kv, "train.sigma_max");
  if (has("train.sigma_min")) c.sigma_min = kv_double(kv, "train.sigma_min");
  if (has("train.tau")) c.peaks.tau = kv_double(kv, "train.tau");
  if (has("train.delta")) c.peaks.delta = kv_double(kv, "train.delta");
  if (has("train.match_radius")) c.match_radius = kv_double(kv, "train.match_radius");
  if (has("train.seed")) c.seed = std::stoull(kv.at("train.seed"));
  if (has("train.checkpoint_every")) c.checkpoint_every = kv_int(kv, "train.checkpoint_every");
  if (has("train.density_low_max")) c.density_low_max = kv_int(kv, "train.density_low_max");
  if (has("train.density_medium_max")) c.density_medium_max = kv_int(kv, "train.density_medium_max");
  c.validate();
  return c;
}

std::string TrainLog::to_csv() const {
  std::string out =
      "epoch,train_loss,val_mae,val_rmse,val_r2,val_precision,val_recall,val_f_measure\n";
  char buf[256];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.6f,%.6f,", e.epoch, e.train_loss, e.val_mae,
                  e.val_rmse);
    out += buf;
    if (e.val_r2) {
      std::snprintf(buf, sizeof(buf), "%.6f", *e.val_r2);
      out += buf;
    } else {
      out += "undefined";
    }
    std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,%.6f\n", e.val_precision, e.val_recall,
                  e.val_f_measure);
    out += buf;
  }
  return out;
}

std::vector<ConfidenceMap> predict_maps(const Model& model, const std::vector<const Raster*>& images) {
  Tape tape = Tape::inference();
  const auto maps = model.forward(tape, rasters_to_batch(images));
  std::vector<ConfidenceMap> out;
  for (int i = 0; i < static_cast<int>(images.size()); ++i) {
    out.push_back(ConfidenceMap::from_tensor(maps.back(), i, model.config().stride));
  }
  return out;
}

namespace {

constexpr std::size_t kEvalBatch = 8;

template <typename T>
std::vector<std::vector<T>> chunks(const std::vector<T>& items, std::size_t size) {
  std::vector<std::vector<T>> out;
  for (std::size_t i = 0; i < items.size(); i += size) {
    out.emplace_back(items.begin() + static_cast<std::ptrdiff_t>(i),
                     items.begin() + static_cast<std::ptrdiff_t>(std::min(items.size(), i + size)));
  }
  return out;
}

}  // namespace

namespace {

ImageResult match_sample(const Sample& s, const std::vector<Detection>& dets, int stride,
                         double radius) {
  const PointSet gt = to_map_space(s.points, stride);
  std::vector<Point> pred_pts;
  for (const auto& d : dets) pred_pts.push_back(d.position);
  const PointSet pred(std::move(pred_pts), Frame::Map, gt.width(), gt.height());
  ImageResult r = match_points(gt, pred, radius);
  r.image_id = s.id;
  return r;
}

void finish_report(EvalOutput& out, const TrainConfig& config) {
  DensityBoundaries b;
  if (config.density_low_max >= 0) {
    b = {config.density_low_max, config.density_medium_max};
  } else {
    std::vector<int> counts;
    for (const auto& r : out.images) counts.push_back(r.gt_count);
    b = tercile_boundaries(counts);
  }
  out.report = make_report(out.images, b);
}

}  // namespace

EvalOutput evaluate(const Model& model, const std::vector<const Sample*>& samples,
                    const TrainConfig& config) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  const int stride = model.config().stride;
  EvalOutput out;
  for (const auto& batch : chunks(samples, kEvalBatch)) {
    std::vector<const Raster*> images;
    for (const Sample* s : batch) images.push_back(&s->image);
    const auto maps = predict_maps(model, images);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Sample& s = *batch[i];
      auto dets = to_image_space(find_peaks(maps[i], config.peaks), stride);
      out.images.push_back(match_sample(s, dets, stride, config.match_radius));
      out.detections.push_back({s.id, std::move(dets)});
    }
  }
  finish_report(out, config);
  return out;
}

EvalOutput evaluate_detections(const std::vector<const Sample*>& samples,
                               const std::vector<ImageDetections>& detections, int stride,
                               const TrainConfig& config) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  if (stride < 1) throw std::invalid_argument("evaluate: stride must be positive");
  std::map<std::string, const ImageDetections*> by_id;
  for (const auto& d : detections) by_id[d.image_id] = &d;
  std::set<std::string> known;
  for (const Sample* s : samples) known.insert(s->id);
  for (const auto& [id, d] : by_id) {
    if (!known.count(id)) throw std::invalid_argument("evaluate: detections for unknown image " + id);
  }
  EvalOutput out;
  for (const Sample* s : samples) {
    const double map_w = s->image.width / stride;
    const double map_h = s->image.height / stride;
    std::vector<Detection> dets;
    if (auto it = by_id.find(s->id); it != by_id.end()) dets = it->second->detections;
    for (auto& d : dets) {
      // Inverse of to_image_space, kept inside the map frame.
      auto to_map = [&](double v, double extent) {
        return std::clamp((v + 0.5) / stride - 0.5, 0.0, std::nextafter(extent, 0.0));
      };
      d.position = {to_map(d.image_position.x, map_w), to_map(d.image_position.y, map_h)};
    }
    out.images.push_back(match_sample(*s, dets, stride, config.match_radius));
    out.detections.push_back({s->id, std::move(dets)});
  }
  finish_report(out, config);
  return out;
}

std::vector<ConfidenceMap> ground_truth_maps(const Sample& sample, const SigmaSchedule& schedule,
                                             int stride) {
  const PointSet map_pts = to_map_space(sample.points, stride);
  const int h = sample.image.height / stride;
  const int w = sample.image.width / stride;
  std::vector<ConfidenceMap> out;
  for (double sigma : schedule.sigmas()) {
    ConfidenceMap m = render_gt_map(map_pts, sigma, h, w);
    m.stride = stride;
    out.push_back(std::move(m));
  }
  return out;
}

namespace {

// gts[t] for the batch, stacked.
std::vector<Tensor> batch_targets(const std::vector<const Sample*>& batch,
                                  const std::vector<std::vector<ConfidenceMap>>& gt_cache,
                                  const std::vector<std::size_t>& cache_index, int stages) {
  std::vector<Tensor> out;
  for (int t = 0; t < stages; ++t) {
    std::vector<ConfidenceMap> maps;
    for (std::size_t i = 0; i < batch.size(); ++i) maps.push_back(gt_cache[cache_index[i]][t]);
    out.push_back(stack_maps(maps));
  }
  return out;
}

}  // namespace

double dataset_loss(const Model& model, const std::vector<const Sample*>& samples,
                    const SigmaSchedule& schedule) {
  if (samples.empty()) throw std::invalid_argument("dataset_loss: no samples");
  double total = 0.0;
  for (const auto& batch : chunks(samples, kEvalBatch)) {
    std::vector<const Raster*> images;
    std::vector<std::vector<ConfidenceMap>> gts;
    std::vector<std::size_t> index;
    for (const Sample* s : batch) {
      images.push_back(&s->image);
      index.push_back(gts.size());
      gts.push_back(ground_truth_maps(*s, schedule, model.config().stride));
    }
    Tape tape = Tape::inference();
    const auto preds = model.forward(tape, rasters_to_batch(images));
    const auto targets = batch_targets(batch, gts, index, schedule.stages());
    total += multi_stage_loss(tape, preds, targets).item() * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(samples.size());
}

NamedTensors copy_parameters(const Model& model) {
  NamedTensors out;
  for (const auto& [name, t] : model.named_parameters()) out.emplace_back(name, t.clone());
  return out;
}

void restore_parameters(Model& model, const NamedTensors& saved) {
  NamedTensors dest = model.named_parameters();
  assign_checkpoint(saved, dest);
}

TrainResult train(Model& model, const std::vector<const Sample*>& train_set,
                  const std::vector<const Sample*>& val_set, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& run_dir) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training split");
  if (val_set.empty()) throw std::invalid_argument("train: empty validation split");
  const NetworkConfig& net = model.config();
  for (const auto* set : {&train_set, &val_set}) {
    for (const Sample* s : *set) {
      if (s->image.width != net.input_size || s->image.height != net.input_size) {
        throw std::invalid_argument("train: sample " + s->id + " is not " +
                                    std::to_string(net.input_size) + " px square");
      }
    }
  }
  const SigmaSchedule schedule = config.schedule(net.stages);

  if (run_dir) {
    KeyValues kv = net.to_key_values();
    kv.merge(config.to_key_values());
    std::filesystem::create_directories(*run_dir);
    write_atomically(*run_dir / "config.txt",
                     [&](std::ostream& out) { out << format_key_values(kv); });
  }

  std::vector<std::vector<ConfidenceMap>> gt_cache;
  for (const Sample* s : train_set) gt_cache.push_back(ground_truth_maps(*s, schedule, net.stride));

  std::vector<Tensor> params = model.parameters();
  SgdMomentum optimizer(config.learning_rate, config.momentum);
  TrainResult result;
  result.best = copy_parameters(model);
  double best_mae = std::numeric_limits<double>::infinity();
  std::string meta;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(splitmix64(config.seed ^ (static_cast<std::uint64_t>(epoch) << 32)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }

    double loss_sum = 0.0;
    bool diverged = false;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + config.batch_size);
      std::vector<const Sample*> batch;
      std::vector<const Raster*> images;
      std::vector<std::size_t> index;
      for (std::size_t i = b0; i < b1; ++i) {
        batch.push_back(train_set[order[i]]);
        images.push_back(&train_set[order[i]]->image);
        index.push_back(order[i]);
      }
      Tape tape;
      const auto preds = model.forward(tape, rasters_to_batch(images));
      Tensor loss = multi_stage_loss(tape, preds, batch_targets(batch, gt_cache, index, net.stages));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        diverged = true;
        break;
      }
      loss_sum += value * static_cast<double>(batch.size());
      tape.backward(loss);
      optimizer.step(params);
      bool finite = true;
      for (const auto& p : params) finite = finite && all_finite(p.data());
      if (!finite) {
        diverged = true;
        break;
      }
    }
    if (diverged) {
      result.log.diverged = true;
      break;
    }

    const EvalOutput val = evaluate(model, val_set, config);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.val_mae = val.report.overall.counts.mae;
    rec.val_rmse = val.report.overall.counts.rmse;
    rec.val_r2 = val.report.overall.counts.r2;
    rec.val_precision = val.report.overall.pr.precision;
    rec.val_recall = val.report.overall.pr.recall;
    rec.val_f_measure = val.report.overall.pr.f_measure;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.epochs.push_back(rec);

    if (rec.val_mae < best_mae) {
      best_mae = rec.val_mae;
      result.log.best_epoch = epoch;
      result.best = copy_parameters(model);
      if (run_dir) save_checkpoint(*run_dir / "best.pkc", result.best);
    }
    if (run_dir) {
      if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
        save_checkpoint(*run_dir / "last.pkc", model.named_parameters());
      }
      write_atomically(*run_dir / "train_log.csv",
                       [&](std::ostream& out) { out << result.log.to_csv(); });
      char line[96];
      std::snprintf(line, sizeof(line), "epoch_%d_seconds=%.3f\n", epoch, rec.wall_seconds);
      meta += line;
      write_atomically(*run_dir / "meta.txt", [&](std::ostream& out) { out << meta; });
    }
  }

  restore_parameters(model, result.best);
  if (run_dir) {
    if (result.log.epochs.empty()) save_checkpoint(*run_dir / "best.pkc", result.best);
    write_atomically(*run_dir / "train_log.csv",
                     [&](std::ostream& out) { out << result.log.to_csv(); });
  }
  return result;
}

}  // namespace mscount
