#include "airr/embeddings.hpp"

#include <vector>

#include "airr/errors.hpp"

namespace airr {

EmbeddingTableImpl::EmbeddingTableImpl(SchemaPtr schema, int channels, double init_std)
    : schema_(std::move(schema)), channels_(channels) {
  if (channels_ < 1) throw ContractError("EmbeddingTable: channels must be positive");
  const auto rows = static_cast<int64_t>(schema_->total_values());
  scale_ = register_parameter("scale", 1.0 + init_std * torch::randn({rows, channels_}));
  bias_ = register_parameter("bias", init_std * torch::randn({rows, channels_}));
}

void EmbeddingTableImpl::check_value(std::size_t category, int value) const {
  if (category >= schema_->num_categories() || value < 0 || value >= schema_->cardinality(category)) {
    throw ContractError("EmbeddingTable: no entry for category " + std::to_string(category) + " value " +
                        std::to_string(value));
  }
}

ScaleBias EmbeddingTableImpl::entry(std::size_t category, int value) const {
  check_value(category, value);
  const auto row = static_cast<int64_t>(schema_->offset(category)) + value;
  return {scale_[row].clone(), bias_[row].clone()};
}

torch::Tensor EmbeddingTableImpl::rows_for(const torch::Tensor& labels) const {
  const auto n = static_cast<int64_t>(schema_->num_categories());
  if (labels.dim() != 2 || labels.size(1) != n) {
    throw ContractError("inject: labels must be [B, " + std::to_string(n) + "]");
  }
  const auto lab = labels.to(torch::kInt64);
  std::vector<int64_t> offsets, cards;
  for (std::size_t i = 0; i < schema_->num_categories(); ++i) {
    offsets.push_back(static_cast<int64_t>(schema_->offset(i)));
    cards.push_back(schema_->cardinality(i));
  }
  const auto card_t = torch::tensor(cards, torch::kInt64);
  if (lab.lt(0).any().item<bool>() || lab.ge(card_t.unsqueeze(0)).any().item<bool>()) {
    throw ContractError("inject: label outside its category's value range");
  }
  return lab + torch::tensor(offsets, torch::kInt64).unsqueeze(0);  // [B, n]
}

ScaleBias EmbeddingTableImpl::sums(const torch::Tensor& labels) const {
  const auto flat = rows_for(labels).reshape({-1});
  const auto b = labels.size(0);
  const auto n = labels.size(1);
  return {scale_.index_select(0, flat).reshape({b, n, channels_}).sum(1),
          bias_.index_select(0, flat).reshape({b, n, channels_}).sum(1)};
}

ScaleBias EmbeddingTableImpl::blended_sums(const torch::Tensor& sources, const torch::Tensor& targets,
                                           const torch::Tensor& strengths) const {
  if (targets.sizes() != sources.sizes() || strengths.sizes() != sources.sizes()) {
    throw ContractError("blend: sources, targets and strengths must share one [B, n] shape");
  }
  const auto c = strengths.to(scale_.scalar_type());
  if (c.lt(0).any().item<bool>() || c.gt(1).any().item<bool>() || !torch::isfinite(c).all().item<bool>()) {
    throw ContractError("blend: strengths must lie in [0, 1]");
  }
  const auto b = sources.size(0);
  const auto n = sources.size(1);
  const auto src = rows_for(sources).reshape({-1});
  const auto tgt = rows_for(targets).reshape({-1});
  const auto w = c.unsqueeze(-1);  // [B, n, 1]
  auto blend = [&](const torch::Tensor& table) {
    const auto s = table.index_select(0, src).reshape({b, n, channels_});
    const auto t = table.index_select(0, tgt).reshape({b, n, channels_});
    return ((1 - w) * s + w * t).sum(1);
  };
  return {blend(scale_), blend(bias_)};
}

torch::Tensor EmbeddingTableImpl::inject(const torch::Tensor& removed, const torch::Tensor& labels) const {
  return inject_sums(removed, sums(labels));
}

ScaleBias EmbeddingTableImpl::interpolate(std::size_t category, int source, int target, double c) const {
  if (!(c >= 0.0 && c <= 1.0)) throw ContractError("interpolate: coefficient must lie in [0, 1]");
  auto src = entry(category, source);
  auto tgt = entry(category, target);
  // Endpoints return the table entries themselves so they match bit for bit.
  if (c == 0.0) return src;
  if (c == 1.0) return tgt;
  return {(1.0 - c) * src.scale + c * tgt.scale, (1.0 - c) * src.bias + c * tgt.bias};
}

nlohmann::json EmbeddingTableImpl::to_json() const {
  nlohmann::json out = nlohmann::json::object();
  const auto scale = scale_.detach().to(torch::kCPU).contiguous();
  const auto bias = bias_.detach().to(torch::kCPU).contiguous();
  for (std::size_t i = 0; i < schema_->num_categories(); ++i) {
    const auto& cat = schema_->category(i);
    for (int v = 0; v < schema_->cardinality(i); ++v) {
      const auto row = static_cast<int64_t>(schema_->offset(i)) + v;
      const float* s = scale[row].data_ptr<float>();
      const float* g = bias[row].data_ptr<float>();
      out[cat.name][cat.values[static_cast<std::size_t>(v)]] = {
          {"scale", std::vector<float>(s, s + channels_)}, {"bias", std::vector<float>(g, g + channels_)}};
    }
  }
  return out;
}

void EmbeddingTableImpl::load_json(const nlohmann::json& j) {
  torch::NoGradGuard guard;
  for (std::size_t i = 0; i < schema_->num_categories(); ++i) {
    const auto& cat = schema_->category(i);
    if (!j.contains(cat.name)) throw ConfigError("embeddings: missing category '" + cat.name + "'");
    for (int v = 0; v < schema_->cardinality(i); ++v) {
      const auto& name = cat.values[static_cast<std::size_t>(v)];
      if (!j[cat.name].contains(name)) {
        throw ConfigError("embeddings: missing value '" + cat.name + "=" + name + "'");
      }
      const auto s = j[cat.name][name].at("scale").get<std::vector<float>>();
      const auto g = j[cat.name][name].at("bias").get<std::vector<float>>();
      if (s.size() != static_cast<std::size_t>(channels_) || g.size() != s.size()) {
        throw ConfigError("embeddings: wrong vector length for '" + cat.name + "=" + name + "'");
      }
      const auto row = static_cast<int64_t>(schema_->offset(i)) + v;
      scale_[row].copy_(torch::tensor(s));
      bias_[row].copy_(torch::tensor(g));
    }
  }
}

torch::Tensor inject_sums(const torch::Tensor& removed, const ScaleBias& sums) {
  if (removed.dim() != 4 || sums.scale.dim() != 2 || sums.scale.size(0) != removed.size(0) ||
      sums.scale.size(1) != removed.size(1) || sums.bias.sizes() != sums.scale.sizes()) {
    throw ContractError("inject: embedding sums must be [B, C] matching removed features [B, C, h, w]");
  }
  return sums.scale.unsqueeze(-1).unsqueeze(-1) * removed + sums.bias.unsqueeze(-1).unsqueeze(-1);
}

torch::Tensor identity_inject(const torch::Tensor& removed) { return removed; }

}  // namespace airr
