#include "airr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <torch/torch.h>

#include "airr/errors.hpp"
#include "airr/networks.hpp"

namespace airr {

AttributeLogits AttributeLogits::split(const AttributeSchema& schema, const torch::Tensor& flat) {
  if (flat.dim() != 2 || flat.size(1) != static_cast<int64_t>(schema.total_values())) {
    throw ContractError("logits: expected [B, " + std::to_string(schema.total_values()) + "]");
  }
  AttributeLogits out;
  for (std::size_t i = 0; i < schema.num_categories(); ++i) {
    out.per_category.push_back(
        flat.narrow(1, static_cast<int64_t>(schema.offset(i)), schema.cardinality(i)));
  }
  return out;
}

torch::Tensor AttributeLogits::argmax() const {
  std::vector<torch::Tensor> cols;
  for (const auto& l : per_category) cols.push_back(l.argmax(1));
  return torch::stack(cols, 1);
}

namespace losses {

namespace {

void check_labels(const AttributeLogits& logits, const torch::Tensor& labels) {
  if (labels.dim() != 2 || labels.size(1) != static_cast<int64_t>(logits.size())) {
    throw ContractError("loss: labels must be [B, n] with one column per category");
  }
  for (const auto& l : logits.per_category) {
    if (l.size(0) != labels.size(0)) throw ContractError("loss: logits and labels batch sizes differ");
  }
}

}  // namespace

nlohmann::json LossReport::to_json() const {
  return {{"L_d_mle", d_mle}, {"L_d_mim", d_mim},   {"L_rec", rec},         {"L_adv_g", adv_g},
          {"L_adv_d", adv_d}, {"L_attr_g", attr_g}, {"L_attr_d", attr_d},   {"L_p", perceptual},
          {"total_g", total_g}, {"total_d", total_d}};
}

LossReport LossReport::from_json(const nlohmann::json& j) {
  LossReport r;
  r.d_mle = j.at("L_d_mle");
  r.d_mim = j.at("L_d_mim");
  r.rec = j.at("L_rec");
  r.adv_g = j.at("L_adv_g");
  r.adv_d = j.at("L_adv_d");
  r.attr_g = j.at("L_attr_g");
  r.attr_d = j.at("L_attr_d");
  r.perceptual = j.at("L_p");
  r.total_g = j.at("total_g");
  r.total_d = j.at("total_d");
  return r;
}

torch::Tensor mle_loss(const AttributeLogits& logits, const torch::Tensor& labels) {
  check_labels(logits, labels);
  torch::Tensor per_item;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto log_probs = torch::log_softmax(logits[i], 1);
    const auto nll = -log_probs.gather(1, labels.select(1, static_cast<int64_t>(i)).unsqueeze(1)).squeeze(1);
    per_item = per_item.defined() ? per_item + nll : nll;
  }
  return per_item.mean();
}

torch::Tensor mim_loss(const AttributeLogits& logits_on_removed, double margin) {
  if (!(margin > 0.0)) throw ContractError("mim_loss: margin must be positive");
  torch::Tensor per_item;
  for (const auto& logits : logits_on_removed.per_category) {
    const double log_uniform = -std::log(static_cast<double>(logits.size(1)));
    const auto max_log_prob = std::get<0>(torch::log_softmax(logits, 1).max(1));
    const auto term = torch::clamp_min(max_log_prob - log_uniform, margin);
    per_item = per_item.defined() ? per_item + term : term;
  }
  return per_item.mean();
}

torch::Tensor disentanglement_loss(const AttributeLogits& fg_logits, const AttributeLogits& removed_logits,
                                   const torch::Tensor& labels, double margin) {
  return mle_loss(fg_logits, labels) + mim_loss(removed_logits, margin);
}

torch::Tensor reconstruction_loss(const torch::Tensor& reconstructed, const torch::Tensor& original) {
  if (reconstructed.sizes() != original.sizes()) throw ContractError("reconstruction_loss: shape mismatch");
  return (reconstructed - original).abs().mean();
}

torch::Tensor adv_loss_generator(const torch::Tensor& d_map, const torch::Tensor& d_rec) {
  return ((1.0 - d_map).square() + (1.0 - d_rec).square()).mean();
}

torch::Tensor adv_loss_discriminator(const torch::Tensor& d_real, const torch::Tensor& d_map,
                                     const torch::Tensor& d_rec) {
  return ((1.0 - d_real).square() + 0.5 * (d_map.square() + d_rec.square())).mean();
}

torch::Tensor attr_loss_generator(const AttributeLogits& on_rec, const torch::Tensor& source_labels,
                                  const AttributeLogits& on_map, const torch::Tensor& target_labels) {
  return mle_loss(on_rec, source_labels) + mle_loss(on_map, target_labels);
}

torch::Tensor attr_loss_discriminator(const AttributeLogits& on_real, const torch::Tensor& labels) {
  return mle_loss(on_real, labels);
}

torch::Tensor perceptual_loss(const torch::Tensor& feat_real, const torch::Tensor& feat_rec,
                              const torch::Tensor& feat_ref, const torch::Tensor& feat_map) {
  if (feat_real.sizes() != feat_rec.sizes() || feat_ref.sizes() != feat_map.sizes()) {
    throw ContractError("perceptual_loss: paired features differ in shape");
  }
  return (feat_real - feat_rec).abs().mean() + (feat_ref - feat_map).abs().mean();
}

torch::Tensor perceptual_loss(JudgeImpl& backbone, const torch::Tensor& real, const torch::Tensor& rec,
                              const torch::Tensor& ref, const torch::Tensor& map) {
  if (!backbone.is_frozen()) {
    throw ConfigError("perceptual_loss: backbone must be frozen (no parameter may require grad)");
  }
  return perceptual_loss(backbone.features(real), backbone.features(rec), backbone.features(ref),
                         backbone.features(map));
}

double generator_objective(const LossReport& p, const Lambdas& l) {
  return p.adv_g + l.disentangle * (p.d_mle + p.d_mim) + l.attribute * p.attr_g + l.reconstruct * p.rec +
         l.perceptual * p.perceptual;
}

torch::Tensor generator_objective(const torch::Tensor& adv_g, const torch::Tensor& disentangle,
                                  const torch::Tensor& attr_g, const torch::Tensor& rec,
                                  const torch::Tensor& perceptual, const Lambdas& l) {
  return adv_g + l.disentangle * disentangle + l.attribute * attr_g + l.reconstruct * rec +
         l.perceptual * perceptual;
}

double discriminator_objective(const LossReport& p, double attribute_lambda) {
  return p.adv_d + 2.0 * attribute_lambda * p.attr_d;
}

torch::Tensor discriminator_objective(const torch::Tensor& adv_d, const torch::Tensor& attr_d,
                                      double attribute_lambda) {
  return adv_d + 2.0 * attribute_lambda * attr_d;
}

DiscreteJoint::DiscreteJoint(std::size_t attribute_values, std::size_t representation_states,
                             std::vector<double> p)
    : rows_(attribute_values), cols_(representation_states), p_(std::move(p)) {
  if (rows_ == 0 || cols_ == 0 || p_.size() != rows_ * cols_) {
    throw ContractError("DiscreteJoint: table size does not match dimensions");
  }
  if (std::any_of(p_.begin(), p_.end(), [](double v) { return !(v >= 0.0) || !std::isfinite(v); })) {
    throw ContractError("DiscreteJoint: entries must be finite and nonnegative");
  }
  const double total = std::accumulate(p_.begin(), p_.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("DiscreteJoint: entries must sum to 1");
  for (double pr : representation_marginal()) {
    if (!(pr > 0.0)) throw ContractError("DiscreteJoint: every representation state needs p(r) > 0");
  }
}

std::vector<double> DiscreteJoint::attribute_marginal() const {
  std::vector<double> out(rows_, 0.0);
  for (std::size_t a = 0; a < rows_; ++a) {
    for (std::size_t r = 0; r < cols_; ++r) out[a] += (*this)(a, r);
  }
  return out;
}

std::vector<double> DiscreteJoint::representation_marginal() const {
  std::vector<double> out(cols_, 0.0);
  for (std::size_t a = 0; a < rows_; ++a) {
    for (std::size_t r = 0; r < cols_; ++r) out[r] += (*this)(a, r);
  }
  return out;
}

double exact_mutual_information(const DiscreteJoint& joint) {
  const auto pa = joint.attribute_marginal();
  const auto pr = joint.representation_marginal();
  double mi = 0.0;
  for (std::size_t a = 0; a < joint.attribute_values(); ++a) {
    for (std::size_t r = 0; r < joint.representation_states(); ++r) {
      const double p = joint(a, r);
      if (p > 0.0) mi += p * std::log(p / (pa[a] * pr[r]));
    }
  }
  return mi;
}

double mi_upper_bound(const DiscreteJoint& joint) {
  const auto pa = joint.attribute_marginal();
  const auto pr = joint.representation_marginal();
  const double min_pa = *std::min_element(pa.begin(), pa.end());
  if (!(min_pa > 0.0)) throw ContractError("mi_upper_bound: some attribute value has p(a) = 0");
  const double c = -std::log(min_pa);

  double expected_max = 0.0;
  for (std::size_t r = 0; r < joint.representation_states(); ++r) {
    double max_cond = 0.0;
    for (std::size_t a = 0; a < joint.attribute_values(); ++a) max_cond = std::max(max_cond, joint(a, r) / pr[r]);
    expected_max += pr[r] * std::log(max_cond);
  }
  return expected_max + c;
}

}  // namespace losses
}  // namespace airr
