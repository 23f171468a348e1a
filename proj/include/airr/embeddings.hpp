#pragma once

#include <cstdint>
#include <utility>

#include <json.hpp>
#include <torch/torch.h>

#include "airr/schema.hpp"

namespace airr {

/// A scale/bias pair, each a [C] vector.
struct ScaleBias {
  torch::Tensor scale;
  torch::Tensor bias;
};

/// Learned per-value scale (beta) and bias (gamma) vectors, stored as two
/// [total_values, C] parameters indexed by the schema's flattened offsets.
class EmbeddingTableImpl : public torch::nn::Module {
 public:
  EmbeddingTableImpl(SchemaPtr schema, int channels, double init_std = 0.02);

  const SchemaPtr& schema() const { return schema_; }
  int channels() const { return channels_; }
  const torch::Tensor& scale() const { return scale_; }
  const torch::Tensor& bias() const { return bias_; }

  /// Copy of the table entry for (category, value).
  ScaleBias entry(std::size_t category, int value) const;

  /// Summed beta and gamma over every category of each row: [B,C] each.
  /// labels: [B, n] int64.
  ScaleBias sums(const torch::Tensor& labels) const;

  /// Per-category blend sum_i [(1 - c_i) e(src_i) + c_i e(tgt_i)] for both
  /// beta and gamma. All arguments are [B, n]; strengths lie in [0, 1]. With
  /// zero strengths this equals the unblended sum of the sources bit for bit.
  ScaleBias blended_sums(const torch::Tensor& sources, const torch::Tensor& targets,
                         const torch::Tensor& strengths) const;

  /// (sum beta) * removed + sum gamma, broadcast over spatial positions.
  torch::Tensor inject(const torch::Tensor& removed, const torch::Tensor& labels) const;

  /// Linear blend of two values of one category; returns fresh tensors.
  /// Throws ContractError when c is outside [0, 1].
  ScaleBias interpolate(std::size_t category, int source, int target, double c) const;

  /// Keyed by category name, then value name.
  nlohmann::json to_json() const;
  /// Loads entries by name; the target table's schema decides row order.
  void load_json(const nlohmann::json& j);

 private:
  torch::Tensor rows_for(const torch::Tensor& labels) const;
  void check_value(std::size_t category, int value) const;

  SchemaPtr schema_;
  int channels_;
  torch::Tensor scale_;
  torch::Tensor bias_;
};
TORCH_MODULE(EmbeddingTable);

/// (sum beta) * removed + sum gamma with precomputed [B,C] sums.
torch::Tensor inject_sums(const torch::Tensor& removed, const ScaleBias& sums);

/// Returns its input; the no-attribute diagnostic path.
torch::Tensor identity_inject(const torch::Tensor& removed);

}  // namespace airr
