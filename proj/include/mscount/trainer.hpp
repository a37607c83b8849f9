#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mscount/checkpoint.hpp"
#include "mscount/dataset.hpp"
#include "mscount/kv.hpp"
#include "mscount/localization.hpp"
#include "mscount/metrics.hpp"
#include "mscount/network.hpp"

namespace mscount {

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int epochs = 100;
  int batch_size = 4;
  double sigma_max = 3.0;
  double sigma_min = 1.0;
  PeakParams peaks;
  double match_radius = 3.0;  // map pixels
  std::uint64_t seed = 1;
  /// Write last.pkc every this many epochs (0 disables).
  int checkpoint_every = 10;
  /// Fixed density boundaries; negative values select count terciles of the
  /// evaluated set.
  int density_low_max = -1;
  int density_medium_max = -1;

  void validate() const;
  SigmaSchedule schedule(int stages) const;
  KeyValues to_key_values() const;
  /// Reads train.* keys when present, keeping defaults for absent ones.
  static TrainConfig from_key_values(const KeyValues& kv);
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  double val_rmse = 0.0;
  std::optional<double> val_r2;
  double val_precision = 0.0;
  double val_recall = 0.0;
  double val_f_measure = 0.0;
  double wall_seconds = 0.0;  // not part of equality or the CSV log
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  bool diverged = false;

  /// CSV without wall times: epoch,train_loss,val_mae,val_rmse,val_r2,
  /// val_precision,val_recall,val_f_measure.
  std::string to_csv() const;
};

struct EvalOutput {
  CountingReport report;
  std::vector<ImageResult> images;
  std::vector<ImageDetections> detections;
};

/// Forward pass + peak extraction for one batch of equally sized images;
/// returns the final-stage maps.
std::vector<ConfidenceMap> predict_maps(const Model& model, const std::vector<const Raster*>& images);

/// Detections for each sample, matched against its annotations in map space.
/// Throws std::invalid_argument for an empty sample list.
EvalOutput evaluate(const Model& model, const std::vector<const Sample*>& samples,
                    const TrainConfig& config);

/// Matches image-space detections (as read from a detections CSV) against the
/// samples in map space. Samples absent from `detections` count as having no
/// detections; ids matching no sample are rejected with std::invalid_argument.
EvalOutput evaluate_detections(const std::vector<const Sample*>& samples,
                               const std::vector<ImageDetections>& detections, int stride,
                               const TrainConfig& config);

/// Ground-truth maps for one sample at every stage of the schedule.
std::vector<ConfidenceMap> ground_truth_maps(const Sample& sample, const SigmaSchedule& schedule,
                                             int stride);

/// Mean per-image multi-stage loss of `samples` under the current parameters.
double dataset_loss(const Model& model, const std::vector<const Sample*>& samples,
                    const SigmaSchedule& schedule);

struct TrainResult {
  TrainLog log;
  NamedTensors best;  // copy of the parameters at the best validation MAE
};

/// Mini-batch SGD with momentum over the train split, validating after every
/// epoch. On return the model holds the best-validation-MAE parameters. When
/// `run_dir` is set, writes config.txt, train_log.csv, best.pkc, last.pkc and
/// meta.txt there. A non-finite loss stops training with the best parameters
/// restored and log.diverged set.
TrainResult train(Model& model, const std::vector<const Sample*>& train_set,
                  const std::vector<const Sample*>& val_set, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& run_dir = std::nullopt);

NamedTensors copy_parameters(const Model& model);
void restore_parameters(Model& model, const NamedTensors& saved);

}  // namespace mscount
