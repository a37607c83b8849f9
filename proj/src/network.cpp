#include "mscount/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mscount/ops.hpp"
#include "mscount/rng.hpp"

namespace mscount {

void NetworkConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw std::invalid_argument("network config: " + what);
  };
  if (backbone_widths.size() != 3) fail("backbone_widths needs three block widths");
  for (int w : backbone_widths) {
    if (w < 1) fail("backbone widths must be positive");
  }
  if (stride != 8) fail("stride is fixed at 8 by the three pooling blocks");
  if (input_size < stride || input_size % stride != 0) {
    fail("input_size " + std::to_string(input_size) + " not divisible by stride 8");
  }
  if (stages < 1) fail("stages must be at least 1");
  if (ppm_scales.empty()) fail("ppm_scales is empty");
  if (!std::is_sorted(ppm_scales.begin(), ppm_scales.end()) || ppm_scales.front() < 1) {
    fail("ppm_scales must be positive and ascending");
  }
  if (ppm_scales.back() > map_size()) {
    fail("largest ppm scale exceeds the feature map size " + std::to_string(map_size()));
  }
  if (ppm_channels < 1 || stage_channels < 1 || stage_head_channels < 1) {
    fail("channel widths must be positive");
  }
}

KeyValues NetworkConfig::to_key_values() const {
  return {
      {"net.input_size", std::to_string(input_size)},
      {"net.stages", std::to_string(stages)},
      {"net.backbone_widths", join_ints(backbone_widths)},
      {"net.ppm_scales", join_ints(ppm_scales)},
      {"net.ppm_channels", std::to_string(ppm_channels)},
      {"net.stage_channels", std::to_string(stage_channels)},
      {"net.stage_head_channels", std::to_string(stage_head_channels)},
      {"net.stride", std::to_string(stride)},
  };
}

NetworkConfig NetworkConfig::from_key_values(const KeyValues& kv) {
  NetworkConfig c;
  c.input_size = kv_int(kv, "net.input_size");
  c.stages = kv_int(kv, "net.stages");
  c.backbone_widths = kv_int_list(kv, "net.backbone_widths");
  c.ppm_scales = kv_int_list(kv, "net.ppm_scales");
  c.ppm_channels = kv_int(kv, "net.ppm_channels");
  c.stage_channels = kv_int(kv, "net.stage_channels");
  c.stage_head_channels = kv_int(kv, "net.stage_head_channels");
  c.stride = kv_int(kv, "net.stride");
  c.validate();
  return c;
}

namespace {

ConvLayer make_conv(std::string name, int in_c, int out_c, int k, Rng& rng) {
  ConvLayer layer;
  layer.name = std::move(name);
  const double stddev = std::sqrt(2.0 / (in_c * k * k));
  std::vector<double> w(static_cast<std::size_t>(out_c) * in_c * k * k);
  for (double& v : w) v = stddev * rng.normal();
  layer.weight = Tensor(Shape{out_c, in_c, k, k}, std::move(w), true);
  layer.bias = Tensor(Shape{1, out_c, 1, 1}, 0.0, true);
  return layer;
}

Tensor conv_same(Tape& tape, const ConvLayer& layer, const Tensor& x) {
  return ops::conv2d(tape, x, layer.weight, layer.bias, 1, layer.kernel() / 2);
}

Tensor conv_relu(Tape& tape, const ConvLayer& layer, const Tensor& x) {
  return ops::relu(tape, conv_same(tape, layer, x));
}

}  // namespace

Model::Model(NetworkConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const auto& bw = config_.backbone_widths;

  // VGG19 through its third pooling layer: 2, 2 and 4 convs per block.
  const int convs_per_block[3] = {2, 2, 4};
  int in_c = 3;
  for (int b = 0; b < 3; ++b) {
    for (int i = 0; i < convs_per_block[b]; ++i) {
      backbone_.push_back(make_conv("backbone.conv" + std::to_string(b + 1) + "_" +
                                        std::to_string(i + 1),
                                    in_c, bw[b], 3, rng));
      in_c = bw[b];
    }
  }

  for (int scale : config_.ppm_scales) {
    ppm_.push_back(make_conv("ppm.level" + std::to_string(scale), config_.feature_channels(),
                             config_.ppm_channels, 1, rng));
  }

  const int ppm_c = config_.ppm_output_channels();
  const int sc = config_.stage_channels;
  for (int t = 1; t <= config_.stages; ++t) {
    std::vector<ConvLayer> layers;
    const std::string prefix = "stage" + std::to_string(t) + ".conv";
    auto add = [&](int in, int out, int k) {
      layers.push_back(make_conv(prefix + std::to_string(layers.size() + 1), in, out, k, rng));
    };
    if (t == 1) {
      add(ppm_c, sc, 3);
      add(sc, sc, 3);
      add(sc, sc, 3);
      add(sc, config_.stage_head_channels, 1);
      add(config_.stage_head_channels, 1, 1);
    } else {
      add(ppm_c + 1, sc, 7);
      for (int i = 0; i < 4; ++i) add(sc, sc, 7);
      add(sc, sc, 1);
      add(sc, 1, 1);
    }
    stages_.push_back(std::move(layers));
  }
}

Tensor Model::backbone_forward(Tape& tape, const Tensor& image) const {
  const Shape& s = image.shape();
  if (s.c != 3) throw std::invalid_argument("backbone expects 3 channels, got " + s.str());
  if (s.h % config_.stride != 0 || s.w % config_.stride != 0 || s.h == 0 || s.w == 0) {
    throw std::invalid_argument("backbone input " + s.str() + " not divisible by 8");
  }
  Tensor x = image;
  std::size_t layer = 0;
  for (int block_convs : {2, 2, 4}) {
    for (int i = 0; i < block_convs; ++i) x = conv_relu(tape, backbone_[layer++], x);
    x = ops::max_pool_2x2(tape, x);
  }
  return x;
}

Tensor Model::ppm_forward(Tape& tape, const Tensor& features) const {
  const Shape& s = features.shape();
  if (s.c != config_.feature_channels()) {
    throw std::invalid_argument("ppm expects " + std::to_string(config_.feature_channels()) +
                                " channels, got " + s.str());
  }
  const int largest = config_.ppm_scales.back();
  if (s.h < largest || s.w < largest) {
    throw std::invalid_argument("ppm input " + s.str() + " smaller than scale " +
                                std::to_string(largest));
  }
  std::vector<Tensor> parts{features};
  for (std::size_t i = 0; i < ppm_.size(); ++i) {
    Tensor pooled = ops::adaptive_max_pool(tape, features, config_.ppm_scales[i]);
    Tensor level = conv_relu(tape, ppm_[i], pooled);
    parts.push_back(ops::bilinear_upsample(tape, level, s.h, s.w));
  }
  return ops::concat_channels(tape, parts);
}

Tensor Model::stage_forward(Tape& tape, int t, const Tensor& ppm_out,
                            const std::optional<Tensor>& prev_map) const {
  if (t < 1 || t > config_.stages) {
    throw std::invalid_argument("stage index " + std::to_string(t) + " outside 1.." +
                                std::to_string(config_.stages));
  }
  if ((t == 1) == prev_map.has_value()) {
    throw std::invalid_argument(t == 1 ? "stage 1 takes no previous map"
                                       : "stage " + std::to_string(t) + " needs the previous map");
  }
  Tensor x = ppm_out;
  if (prev_map) {
    const Shape& p = prev_map->shape();
    const Shape& f = ppm_out.shape();
    if (p.c != 1 || p.n != f.n || p.h != f.h || p.w != f.w) {
      throw std::invalid_argument("previous map " + p.str() + " does not match features " + f.str());
    }
    x = ops::concat_channels(tape, {ppm_out, *prev_map});
  }
  const auto& layers = stages_[static_cast<std::size_t>(t - 1)];
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) x = conv_relu(tape, layers[i], x);
  return ops::sigmoid(tape, conv_same(tape, layers.back(), x));
}

std::vector<Tensor> Model::forward(Tape& tape, const Tensor& image) const {
  const Shape& s = image.shape();
  if (s.h != config_.input_size || s.w != config_.input_size) {
    throw std::invalid_argument("model expects " + std::to_string(config_.input_size) + "x" +
                                std::to_string(config_.input_size) + " images, got " + s.str());
  }
  const Tensor features = backbone_forward(tape, image);
  const Tensor enhanced = ppm_forward(tape, features);
  std::vector<Tensor> maps;
  maps.reserve(static_cast<std::size_t>(config_.stages));
  for (int t = 1; t <= config_.stages; ++t) {
    std::optional<Tensor> prev;
    if (t > 1) prev = maps.back();
    maps.push_back(stage_forward(tape, t, enhanced, prev));
  }
  return maps;
}

NamedTensors Model::named_parameters() const {
  NamedTensors out;
  auto add = [&](const ConvLayer& l) {
    out.emplace_back(l.name + ".weight", l.weight);
    out.emplace_back(l.name + ".bias", l.bias);
  };
  for (const auto& l : backbone_) add(l);
  for (const auto& l : ppm_) add(l);
  for (const auto& stage : stages_) {
    for (const auto& l : stage) add(l);
  }
  return out;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.size();
  return n;
}

std::vector<Tensor> Model::stage_parameters(int t) const {
  std::vector<Tensor> out;
  for (const auto& l : stages_.at(static_cast<std::size_t>(t - 1))) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

}  // namespace mscount
