#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>

#include <torch/torch.h>

#include "airr/embeddings.hpp"
#include "airr/networks.hpp"

namespace airr {

/// E1, E2 and R outputs for one batch.
struct FeatureBundle {
  torch::Tensor fg;       // [B,C,h,w]
  torch::Tensor bg;       // [B,C_b,h,w]
  torch::Tensor removed;  // [B,C,h,w]
};

/// Every generator-side network plus the embedding table. Decoder calls are
/// counted so callers can verify how many generator passes a request costs.
class AirrModelImpl : public torch::nn::Module {
 public:
  AirrModelImpl(const ArchConfig& arch, SchemaPtr schema);

  /// Split by mask, encode both branches, remove attributes.
  FeatureBundle encode(const torch::Tensor& images, const torch::Tensor& masks);

  /// p_c on arbitrary features.
  AttributeLogits classify(const torch::Tensor& features) { return classifier->forward(features); }

  /// inject(removed, labels) then decode.
  torch::Tensor render(const FeatureBundle& f, const torch::Tensor& labels);
  /// Decode with precomputed embedding sums.
  torch::Tensor render_sums(const FeatureBundle& f, const ScaleBias& sums);
  /// Decode the identity-injected removed features.
  torch::Tensor render_identity(const FeatureBundle& f);

  /// Inference-time edit: one encode and exactly one decode for the batch.
  /// Each category blends source and target embeddings with its strength;
  /// zero strength keeps the source. `sources` defaults to p_c's prediction
  /// on the foreground features.
  struct EditOutput {
    torch::Tensor images;   // [B,3,S,S]
    torch::Tensor sources;  // [B,n] source tuple actually used
  };
  EditOutput edit(const torch::Tensor& images, const torch::Tensor& masks, const torch::Tensor& targets,
                  const torch::Tensor& strengths, const torch::Tensor& sources = {});
  /// edit() with all strengths zero.
  EditOutput reconstruct(const torch::Tensor& images, const torch::Tensor& masks,
                         const torch::Tensor& sources = {});
  /// Identity injection of the removed features, then decode.
  torch::Tensor diagnose(const torch::Tensor& images, const torch::Tensor& masks);

  std::int64_t decode_calls() const { return decode_calls_->load(); }

  const ArchConfig& arch() const { return arch_; }
  const SchemaPtr& schema() const { return schema_; }

  /// Writes encoder_fg.pt, encoder_bg.pt, remover.pt, classifier.pt,
  /// decoder.pt and embeddings.json into `dir`.
  void save_weights(const std::filesystem::path& dir);
  void load_weights(const std::filesystem::path& dir);

  ForegroundEncoder encoder_fg{nullptr};
  BackgroundEncoder encoder_bg{nullptr};
  AttributeRemover remover{nullptr};
  AttributeClassifier classifier{nullptr};
  Decoder decoder{nullptr};
  EmbeddingTable embeddings{nullptr};

 private:
  torch::Tensor decode(const torch::Tensor& injected, const torch::Tensor& bg);

  ArchConfig arch_;
  SchemaPtr schema_;
  std::shared_ptr<std::atomic<std::int64_t>> decode_calls_ = std::make_shared<std::atomic<std::int64_t>>(0);
};
TORCH_MODULE(AirrModel);

/// Saves a module's parameters and buffers to a single file.
void save_module(const torch::nn::Module& module, const std::filesystem::path& path);
/// Loads into an already-constructed module of matching architecture.
void load_module(torch::nn::Module& module, const std::filesystem::path& path);

}  // namespace airr
