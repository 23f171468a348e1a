#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>

#include <json.hpp>
#include <torch/torch.h>

#include "airr/losses.hpp"
#include "airr/schema.hpp"

namespace airr {

/// Widths and depths of every network; echoed into checkpoint manifests so a
/// checkpoint can only be loaded into the architecture that produced it.
struct ArchConfig {
  int image_size = 64;
  int base_channels = 16;   // first encoder/decoder stage width
  int fg_channels = 64;     // C: foreground feature channels
  int bg_channels = 16;     // C_b: background feature channels
  int res_blocks = 4;       // residual blocks in the decoder
  int remover_layers = 3;   // convolutions in the attribute remover
  int disc_channels = 32;   // discriminator first-layer width
  int judge_channels = 32;  // judge first-layer width
  int judge_features = 128; // judge penultimate width

  int feature_size() const { return image_size / 4; }
  nlohmann::json to_json() const;
  static ArchConfig from_json(const nlohmann::json& j);
  bool operator==(const ArchConfig&) const = default;
};

/// Plain conv-act-conv residual block.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(int channels, bool instance_norm);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// E1: [B,3,S,S] -> [B,C,S/4,S/4].
class ForegroundEncoderImpl : public torch::nn::Module {
 public:
  explicit ForegroundEncoderImpl(const ArchConfig& arch);
  torch::Tensor forward(const torch::Tensor& fg_image);

 private:
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(ForegroundEncoder);

/// E2: [B,3,S,S] -> [B,C_b,S/4,S/4]. Shallower than E1.
class BackgroundEncoderImpl : public torch::nn::Module {
 public:
  explicit BackgroundEncoderImpl(const ArchConfig& arch);
  torch::Tensor forward(const torch::Tensor& bg_image);

 private:
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(BackgroundEncoder);

/// R: a plain stack of convolutions with no bypass of any layer, so zeroing
/// every parameter forces a zero output.
class AttributeRemoverImpl : public torch::nn::Module {
 public:
  explicit AttributeRemoverImpl(const ArchConfig& arch);
  torch::Tensor forward(const torch::Tensor& fg_features);
  void zero_parameters();

 private:
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(AttributeRemover);

/// p_c: one residual block, global average pool, linear head per category.
/// Applied to both E1 features and removed features.
class AttributeClassifierImpl : public torch::nn::Module {
 public:
  AttributeClassifierImpl(const ArchConfig& arch, SchemaPtr schema);
  AttributeLogits forward(const torch::Tensor& features);

 private:
  SchemaPtr schema_;
  ResidualBlock block_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(AttributeClassifier);

/// G: concat[injected fg, bg] -> image in [0,1].
class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(const ArchConfig& arch);
  torch::Tensor forward(const torch::Tensor& injected_fg, const torch::Tensor& bg);

 private:
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(Decoder);

struct DiscriminatorOutput {
  torch::Tensor realness;  // [B]
  AttributeLogits attributes;
};

/// D with a shared strided trunk, a realness head averaged to one scalar per
/// image, and an attribute classification head (p_d).
class DiscriminatorImpl : public torch::nn::Module {
 public:
  DiscriminatorImpl(const ArchConfig& arch, SchemaPtr schema);
  DiscriminatorOutput forward(const torch::Tensor& image);

 private:
  SchemaPtr schema_;
  torch::nn::Sequential trunk_{nullptr};
  torch::nn::Conv2d realness_{nullptr};
  torch::nn::Linear attributes_{nullptr};
};
TORCH_MODULE(Discriminator);

/// Independent full-image attribute classifier. Frozen after training; its
/// penultimate layer provides retrieval and perceptual-loss features.
class JudgeImpl : public torch::nn::Module {
 public:
  JudgeImpl(const ArchConfig& arch, SchemaPtr schema);

  /// Penultimate features [B, judge_features].
  torch::Tensor features(const torch::Tensor& image);
  AttributeLogits classify_features(const torch::Tensor& features);
  AttributeLogits forward(const torch::Tensor& image) { return classify_features(features(image)); }

  void freeze();
  bool is_frozen() const;
  const SchemaPtr& schema() const { return schema_; }

 private:
  SchemaPtr schema_;
  torch::nn::Sequential trunk_{nullptr};
  torch::nn::Linear penultimate_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(Judge);

/// Number of scalar parameters.
int64_t parameter_count(const torch::nn::Module& module);

/// SHA-256 over every parameter and buffer, in registration order.
std::string parameter_hash(const torch::nn::Module& module);

}  // namespace airr
