#include "airr/networks.hpp"

#include "airr/errors.hpp"
#include "airr/hash.hpp"

namespace airr {

namespace nn = torch::nn;

namespace {

nn::Conv2d conv(int in, int out, int kernel, int stride, int padding) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding));
}

nn::InstanceNorm2d inorm(int channels) {
  return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).affine(true));
}

nn::LeakyReLU lrelu() { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); }

void check_image(const torch::Tensor& x, const char* who) {
  if (x.dim() != 4 || x.size(1) != 3) {
    throw ContractError(std::string(who) + ": expected [B,3,H,W], got " + std::to_string(x.dim()) + "-d tensor");
  }
}

}  // namespace

nlohmann::json ArchConfig::to_json() const {
  return {{"image_size", image_size},         {"base_channels", base_channels},
          {"fg_channels", fg_channels},       {"bg_channels", bg_channels},
          {"res_blocks", res_blocks},         {"remover_layers", remover_layers},
          {"disc_channels", disc_channels},   {"judge_channels", judge_channels},
          {"judge_features", judge_features}};
}

ArchConfig ArchConfig::from_json(const nlohmann::json& j) {
  ArchConfig a;
  a.image_size = j.at("image_size");
  a.base_channels = j.at("base_channels");
  a.fg_channels = j.at("fg_channels");
  a.bg_channels = j.at("bg_channels");
  a.res_blocks = j.at("res_blocks");
  a.remover_layers = j.at("remover_layers");
  a.disc_channels = j.at("disc_channels");
  a.judge_channels = j.at("judge_channels");
  a.judge_features = j.at("judge_features");
  return a;
}

ResidualBlockImpl::ResidualBlockImpl(int channels, bool instance_norm) {
  nn::Sequential body;
  body->push_back(conv(channels, channels, 3, 1, 1));
  if (instance_norm) body->push_back(inorm(channels));
  body->push_back(nn::ReLU());
  body->push_back(conv(channels, channels, 3, 1, 1));
  if (instance_norm) body->push_back(inorm(channels));
  body_ = register_module("body", body);
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) { return x + body_->forward(x); }

ForegroundEncoderImpl::ForegroundEncoderImpl(const ArchConfig& a) {
  const int b = a.base_channels;
  net_ = register_module("net", nn::Sequential(conv(3, b, 7, 1, 3), inorm(b), nn::ReLU(),
                                               conv(b, 2 * b, 4, 2, 1), inorm(2 * b), nn::ReLU(),
                                               conv(2 * b, a.fg_channels, 4, 2, 1), inorm(a.fg_channels),
                                               nn::ReLU()));
}

torch::Tensor ForegroundEncoderImpl::forward(const torch::Tensor& fg_image) {
  check_image(fg_image, "encode_fg");
  return net_->forward(fg_image);
}

BackgroundEncoderImpl::BackgroundEncoderImpl(const ArchConfig& a) {
  const int b = a.base_channels;
  net_ = register_module("net", nn::Sequential(conv(3, b, 4, 2, 1), inorm(b), nn::ReLU(),
                                               conv(b, a.bg_channels, 4, 2, 1), inorm(a.bg_channels),
                                               nn::ReLU()));
}

torch::Tensor BackgroundEncoderImpl::forward(const torch::Tensor& bg_image) {
  check_image(bg_image, "encode_bg");
  return net_->forward(bg_image);
}

AttributeRemoverImpl::AttributeRemoverImpl(const ArchConfig& a) {
  if (a.remover_layers < 1) throw ConfigError("remover_layers must be >= 1");
  nn::Sequential net;
  for (int i = 0; i < a.remover_layers; ++i) {
    net->push_back(conv(a.fg_channels, a.fg_channels, 3, 1, 1));
    if (i + 1 < a.remover_layers) net->push_back(lrelu());
  }
  net_ = register_module("net", net);
}

torch::Tensor AttributeRemoverImpl::forward(const torch::Tensor& fg_features) { return net_->forward(fg_features); }

void AttributeRemoverImpl::zero_parameters() {
  torch::NoGradGuard guard;
  for (auto& p : parameters()) p.zero_();
}

AttributeClassifierImpl::AttributeClassifierImpl(const ArchConfig& a, SchemaPtr schema)
    : schema_(std::move(schema)) {
  block_ = register_module("block", ResidualBlock(a.fg_channels, false));
  head_ = register_module("head", nn::Linear(a.fg_channels, static_cast<int64_t>(schema_->total_values())));
}

AttributeLogits AttributeClassifierImpl::forward(const torch::Tensor& features) {
  const auto pooled = torch::relu(block_->forward(features)).mean({2, 3});
  return AttributeLogits::split(*schema_, head_->forward(pooled));
}

DecoderImpl::DecoderImpl(const ArchConfig& a) {
  const int b = a.base_channels;
  const int c = a.fg_channels;
  nn::Sequential net(conv(c + a.bg_channels, c, 3, 1, 1), inorm(c), nn::ReLU());
  for (int i = 0; i < a.res_blocks; ++i) net->push_back(ResidualBlock(c, true));
  net->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(c, 2 * b, 4).stride(2).padding(1)));
  net->push_back(inorm(2 * b));
  net->push_back(nn::ReLU());
  net->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(2 * b, b, 4).stride(2).padding(1)));
  net->push_back(inorm(b));
  net->push_back(nn::ReLU());
  net->push_back(conv(b, 3, 7, 1, 3));
  net->push_back(nn::Sigmoid());
  net_ = register_module("net", net);
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& injected_fg, const torch::Tensor& bg) {
  if (injected_fg.dim() != 4 || bg.dim() != 4 || injected_fg.size(0) != bg.size(0) ||
      injected_fg.size(2) != bg.size(2) || injected_fg.size(3) != bg.size(3)) {
    throw ContractError("decode: foreground and background feature maps disagree in batch or spatial size");
  }
  return net_->forward(torch::cat({injected_fg, bg}, 1));
}

DiscriminatorImpl::DiscriminatorImpl(const ArchConfig& a, SchemaPtr schema) : schema_(std::move(schema)) {
  const int d = a.disc_channels;
  trunk_ = register_module("trunk", nn::Sequential(conv(3, d, 4, 2, 1), lrelu(), conv(d, 2 * d, 4, 2, 1), lrelu(),
                                                   conv(2 * d, 4 * d, 4, 2, 1), lrelu(),
                                                   conv(4 * d, 8 * d, 4, 2, 1), lrelu()));
  realness_ = register_module("realness", conv(8 * d, 1, 3, 1, 1));
  attributes_ =
      register_module("attributes", nn::Linear(8 * d, static_cast<int64_t>(schema_->total_values())));
}

DiscriminatorOutput DiscriminatorImpl::forward(const torch::Tensor& image) {
  check_image(image, "discriminate");
  const auto h = trunk_->forward(image);
  DiscriminatorOutput out;
  out.realness = realness_->forward(h).mean({1, 2, 3});
  out.attributes = AttributeLogits::split(*schema_, attributes_->forward(h.mean({2, 3})));
  return out;
}

JudgeImpl::JudgeImpl(const ArchConfig& a, SchemaPtr schema) : schema_(std::move(schema)) {
  const int j = a.judge_channels;
  trunk_ = register_module(
      "trunk", nn::Sequential(conv(3, j, 4, 2, 1), nn::BatchNorm2d(j), nn::ReLU(), conv(j, 2 * j, 4, 2, 1),
                              nn::BatchNorm2d(2 * j), nn::ReLU(), conv(2 * j, 4 * j, 4, 2, 1),
                              nn::BatchNorm2d(4 * j), nn::ReLU(), conv(4 * j, 4 * j, 3, 1, 1), nn::ReLU()));
  penultimate_ = register_module("penultimate", nn::Linear(8 * j, a.judge_features));
  head_ = register_module("head", nn::Linear(a.judge_features, static_cast<int64_t>(schema_->total_values())));
}

torch::Tensor JudgeImpl::features(const torch::Tensor& image) {
  check_image(image, "judge");
  const auto t = trunk_->forward(image);
  // Max pooling keeps small shapes visible against the clutter.
  return torch::relu(penultimate_->forward(torch::cat({t.mean({2, 3}), t.amax({2, 3})}, 1)));
}

AttributeLogits JudgeImpl::classify_features(const torch::Tensor& features) {
  return AttributeLogits::split(*schema_, head_->forward(features));
}

void JudgeImpl::freeze() {
  eval();
  for (auto& p : parameters()) p.set_requires_grad(false);
}

bool JudgeImpl::is_frozen() const {
  for (const auto& p : parameters()) {
    if (p.requires_grad()) return false;
  }
  return true;
}

int64_t parameter_count(const torch::nn::Module& module) {
  int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

std::string parameter_hash(const torch::nn::Module& module) {
  Sha256 h;
  auto feed = [&](const std::string& name, const torch::Tensor& t) {
    const auto c = t.detach().to(torch::kCPU).contiguous();
    h.update(name);
    h.update(c.data_ptr(), c.nbytes());
  };
  for (const auto& item : module.named_parameters()) feed(item.key(), item.value());
  for (const auto& item : module.named_buffers()) feed(item.key(), item.value());
  return h.hex_digest();
}

}  // namespace airr
