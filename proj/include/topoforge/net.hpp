#pragma once

// Encoder-decoder density predictor and its ablation variants.
//
//   input (N,3,32,32) = [mask, fx, fy]
//   encoder: 3 x {conv3x3 -> [BN] -> ReLU -> maxpool2}, widths 32, 64, 128 -> (N,128,4,4)
//   append a constant volume-fraction plane -> (N,129,4,4)
//   decoder: block(129->128) @4, up, block(128->64) @8, up, block(64->32) @16, up,
//            block(32->32) @32, conv3x3(32->1), sigmoid
//
// Decoder blocks are SPADE residual blocks fed the mask stack
// [volfrac * mask, fx, fy] resized to their resolution, or plain conv/ReLU
// pairs for the yu-baseline variant.

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>

#include "json.hpp"
#include "topoforge/nn/checkpoint.hpp"
#include "topoforge/nn/layers.hpp"
#include "topoforge/simp.hpp"

namespace topoforge::net {

using nn::ParamList;
using nn::Tensor;

enum class Variant { proposed, proposed_no_bn, yu_baseline };

std::string to_string(Variant v);
/// Accepts "proposed", "proposed-no-bn", "yu-baseline".
Variant parse_variant(const std::string& name);

struct ArchitectureConfig {
  Variant variant = Variant::proposed;
  std::array<int, 3> encoder{32, 64, 128};
  std::array<int, 4> decoder{128, 64, 32, 32};
  int spade_hidden = 64;
  int resolution = 32;

  bool encoder_bn() const { return variant == Variant::proposed; }
  bool spade() const { return variant != Variant::yu_baseline; }
  nlohmann::json to_json() const;
  static ArchitectureConfig from_json(const nlohmann::json& j);
};

/// Network input for a batch: x = [mask, fx, fy] and one volume fraction per sample.
template <typename T>
struct ModelInput {
  Tensor<T> x;
  std::vector<T> volfrac;

  int batch() const { return x.n(); }
};

template <typename T>
ModelInput<T> make_input(std::span<const simp::DesignSpec> specs);

/// [volfrac * mask, fx, fy] at full resolution.
template <typename T>
Tensor<T> mask_stack(const ModelInput<T>& input);

/// Appends one channel per sample filled with that sample's volume fraction.
template <typename T>
Tensor<T> inject_volfrac(const Tensor<T>& feat, const std::vector<T>& volfrac);

template <typename T>
class TopoNet {
 public:
  explicit TopoNet(ArchitectureConfig config = {}, std::uint64_t seed = 0);
  TopoNet(const TopoNet&) = delete;
  TopoNet& operator=(const TopoNet&) = delete;

  Tensor<T> encode(const Tensor<T>& x);
  Tensor<T> decode(const Tensor<T>& feat, const Tensor<T>& stack);
  /// Full pass; output (N,1,32,32) in (0,1).
  Tensor<T> forward(const ModelInput<T>& input);
  /// Backpropagates d(loss)/d(output) of the last forward into parameter gradients.
  void backward(const Tensor<T>& dy);

  void set_training(bool on);
  bool training() const { return training_; }
  void zero_grad();
  void for_each_norm(const std::function<void(nn::BatchNorm2d<T>&)>& fn);

  /// Parameters and buffers with stable dotted names.
  ParamList<T> parameters();
  std::size_t trainable_count();
  const ArchitectureConfig& config() const { return config_; }

 private:
  struct EncoderStage {
    nn::Conv2d<T> conv;
    std::optional<nn::BatchNorm2d<T>> bn;
    Tensor<T> relu_out;
    std::vector<std::uint32_t> argmax;
  };

  ArchitectureConfig config_;
  std::vector<EncoderStage> encoder_;
  std::vector<std::unique_ptr<nn::DecoderBlock<T>>> decoder_;
  nn::Conv2d<T> head_;
  Tensor<T> out_;
  std::vector<bool> upsampled_;
  int feat_channels_ = 0;
  bool training_ = true;
};

/// Writes the parameter file and a JSON sidecar (path + ".json") holding the
/// architecture and any extra metadata (best epoch, validation MAE, ...).
void save_model(const std::filesystem::path& path, TopoNet<float>& net,
                const nlohmann::json& meta = nlohmann::json::object());

/// Reads the sidecar, rebuilds the network and loads parameters. When expected
/// is set, a different variant is a LoadError. The model is left in eval mode.
std::unique_ptr<TopoNet<float>> load_model(const std::filesystem::path& path,
                                           std::optional<Variant> expected = std::nullopt);

nlohmann::json read_model_meta(const std::filesystem::path& path);

struct Prediction {
  simp::Field density;
  double seconds = 0.0;
};

/// Eval-mode inference. Concurrent calls must use separate instances.
class Predictor {
 public:
  explicit Predictor(const std::filesystem::path& checkpoint,
                     std::optional<Variant> expected = std::nullopt);
  explicit Predictor(std::unique_ptr<TopoNet<float>> net);

  Prediction predict(const simp::DesignSpec& spec);
  std::vector<simp::Field> predict_batch(std::span<const simp::DesignSpec> specs);
  TopoNet<float>& net() { return *net_; }

 private:
  std::unique_ptr<TopoNet<float>> net_;
};

/// Converts a (1,1,H,W) slice of a network output to a field.
simp::Field to_field(const Tensor<float>& out, int sample);

}  // namespace topoforge::net
