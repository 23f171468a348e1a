#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/types.h>

#include "airr/schema.hpp"

namespace airr {

class JudgeImpl;

/// One logit tensor [B, |a_i|] per schema category.
struct AttributeLogits {
  std::vector<torch::Tensor> per_category;

  /// Splits flat logits [B, total_values] along the schema's category offsets.
  static AttributeLogits split(const AttributeSchema& schema, const torch::Tensor& flat);

  std::size_t size() const { return per_category.size(); }
  const torch::Tensor& operator[](std::size_t i) const { return per_category.at(i); }
  /// Per-category argmax as [B, n] int64.
  torch::Tensor argmax() const;
};

namespace losses {

/// Weights of the generator and discriminator objectives.
struct Lambdas {
  double disentangle = 0.25;  // lambda1
  double attribute = 0.125;   // lambda2
  double reconstruct = 1.0;   // lambda3
  double perceptual = 1.0;    // lambda4
};

/// Named scalar terms of one training step plus the weighted totals.
struct LossReport {
  double d_mle = 0;
  double d_mim = 0;
  double rec = 0;
  double adv_g = 0;
  double adv_d = 0;
  double attr_g = 0;
  double attr_d = 0;
  double perceptual = 0;
  double total_g = 0;
  double total_d = 0;

  nlohmann::json to_json() const;
  static LossReport from_json(const nlohmann::json& j);
  bool operator==(const LossReport&) const = default;
};

// All batch reductions are means; sums over categories stay sums. Natural log.

/// -sum_i log softmax(logits_i)[label_i], batch mean. labels: [B, n] int64.
torch::Tensor mle_loss(const AttributeLogits& logits, const torch::Tensor& labels);

/// sum_i max{ max_v log softmax(logits_i)_v - log(1/|a_i|), margin }, batch mean.
torch::Tensor mim_loss(const AttributeLogits& logits_on_removed, double margin);

/// mle_loss(fg_logits, labels) + mim_loss(removed_logits, margin).
torch::Tensor disentanglement_loss(const AttributeLogits& fg_logits, const AttributeLogits& removed_logits,
                                   const torch::Tensor& labels, double margin);

/// Mean absolute difference.
torch::Tensor reconstruction_loss(const torch::Tensor& reconstructed, const torch::Tensor& original);

/// (1 - D(I_map))^2 + (1 - D(I_rec))^2, batch mean. Inputs are realness scalars [B].
torch::Tensor adv_loss_generator(const torch::Tensor& d_map, const torch::Tensor& d_rec);

/// (1 - D(I))^2 + (D(I_map)^2 + D(I_rec)^2) / 2, batch mean.
torch::Tensor adv_loss_discriminator(const torch::Tensor& d_real, const torch::Tensor& d_map,
                                     const torch::Tensor& d_rec);

/// Discriminator attribute-head cross-entropy on both generated images.
torch::Tensor attr_loss_generator(const AttributeLogits& on_rec, const torch::Tensor& source_labels,
                                  const AttributeLogits& on_map, const torch::Tensor& target_labels);

/// Discriminator attribute-head cross-entropy on real images.
torch::Tensor attr_loss_discriminator(const AttributeLogits& on_real, const torch::Tensor& labels);

/// mean|f(I) - f(I_rec)| + mean|f(I_ref) - f(I_map)| over precomputed features.
torch::Tensor perceptual_loss(const torch::Tensor& feat_real, const torch::Tensor& feat_rec,
                              const torch::Tensor& feat_ref, const torch::Tensor& feat_map);

/// Same, with features taken from the judge backbone. Throws ConfigError when
/// any backbone parameter still requires gradients.
torch::Tensor perceptual_loss(JudgeImpl& backbone, const torch::Tensor& real, const torch::Tensor& rec,
                              const torch::Tensor& ref, const torch::Tensor& map);

/// adv_g + l1 * (d_mle + d_mim) + l2 * attr_g + l3 * rec + l4 * perceptual.
double generator_objective(const LossReport& parts, const Lambdas& lambdas);
torch::Tensor generator_objective(const torch::Tensor& adv_g, const torch::Tensor& disentangle,
                                  const torch::Tensor& attr_g, const torch::Tensor& rec,
                                  const torch::Tensor& perceptual, const Lambdas& lambdas);

/// adv_d + 2 * l2 * attr_d.
double discriminator_objective(const LossReport& parts, double attribute_lambda);
torch::Tensor discriminator_objective(const torch::Tensor& adv_d, const torch::Tensor& attr_d,
                                      double attribute_lambda);

// ---------------------------------------------------------------------------
// Mutual information between an attribute and a discrete representation.
// ---------------------------------------------------------------------------

/// Joint table p(a, r), row-major with |a| rows and |r| columns.
class DiscreteJoint {
 public:
  /// Requires nonnegative entries summing to 1 (within 1e-9) and a strictly
  /// positive p(r) for every column.
  DiscreteJoint(std::size_t attribute_values, std::size_t representation_states, std::vector<double> p);

  std::size_t attribute_values() const { return rows_; }
  std::size_t representation_states() const { return cols_; }
  double operator()(std::size_t a, std::size_t r) const { return p_[a * cols_ + r]; }
  std::vector<double> attribute_marginal() const;
  std::vector<double> representation_marginal() const;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> p_;
};

/// sum p(a,r) log(p(a,r) / (p(a) p(r))), with 0 log 0 = 0.
double exact_mutual_information(const DiscreteJoint& joint);

/// E_r[max_a log p(a|r)] + c with c = -log min_a p(a). Throws ContractError
/// when some p(a) is zero.
double mi_upper_bound(const DiscreteJoint& joint);

}  // namespace losses
}  // namespace airr
