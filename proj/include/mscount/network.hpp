#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mscount/checkpoint.hpp"
#include "mscount/kv.hpp"
#include "mscount/tensor.hpp"

namespace mscount {

/// Architecture hyperparameters. Defaults reproduce the full-size network:
/// VGG19 prefix (64,64 | 128,128 | 256 x4, pooling after each block) giving
/// stride 8, a four-level pyramid pooling module with 512-filter level convs,
/// and stage widths 128 (refinement convs) / 512 (stage-1 1x1 head).
struct NetworkConfig {
  int input_size = 512;
  int stages = 4;
  std::vector<int> backbone_widths = {64, 128, 256};
  std::vector<int> ppm_scales = {1, 2, 3, 6};
  int ppm_channels = 512;
  int stage_channels = 128;
  int stage_head_channels = 512;
  int stride = 8;

  /// Throws std::invalid_argument when an invariant fails.
  void validate() const;

  int feature_channels() const { return backbone_widths.back(); }
  int ppm_output_channels() const {
    return feature_channels() + static_cast<int>(ppm_scales.size()) * ppm_channels;
  }
  int map_size() const { return input_size / stride; }

  KeyValues to_key_values() const;
  /// Reads the keys written by to_key_values; other keys are ignored.
  static NetworkConfig from_key_values(const KeyValues& kv);

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct ConvLayer {
  std::string name;
  Tensor weight;  // (out_c, in_c, k, k)
  Tensor bias;    // (1, out_c, 1, 1)

  int kernel() const { return weight.shape().h; }
};

/// Multi-stage confidence-map network. Parameters require grad and are
/// shared handles: optimizer steps on parameters() update the model.
class Model {
 public:
  /// He-normal weights (std sqrt(2 / (in_c k k))), zero biases.
  Model(NetworkConfig config, std::uint64_t seed);

  const NetworkConfig& config() const { return config_; }

  /// (n, 3, H, W) -> (n, C, H/8, W/8). H and W must be divisible by 8.
  Tensor backbone_forward(Tape& tape, const Tensor& image) const;
  /// (n, c, h, w) -> (n, c + levels * ppm_channels, h, w). h, w >= largest scale.
  Tensor ppm_forward(Tape& tape, const Tensor& features) const;
  /// Stage `t` is 1-based. prev_map must be given iff t > 1.
  Tensor stage_forward(Tape& tape, int t, const Tensor& ppm_out,
                       const std::optional<Tensor>& prev_map) const;
  /// Confidence maps C_1..C_T, each (n, 1, H/8, W/8). The image must be
  /// input_size x input_size.
  std::vector<Tensor> forward(Tape& tape, const Tensor& image) const;

  NamedTensors named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  /// Parameters of stage t (1-based).
  std::vector<Tensor> stage_parameters(int t) const;

 private:
  NetworkConfig config_;
  std::vector<ConvLayer> backbone_;
  std::vector<ConvLayer> ppm_;
  std::vector<std::vector<ConvLayer>> stages_;
};

}  // namespace mscount
