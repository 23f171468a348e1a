#include "airr/model.hpp"

#include <fstream>

#include "airr/data.hpp"
#include "airr/errors.hpp"

namespace airr {

AirrModelImpl::AirrModelImpl(const ArchConfig& arch, SchemaPtr schema) : arch_(arch), schema_(std::move(schema)) {
  encoder_fg = register_module("encoder_fg", ForegroundEncoder(arch));
  encoder_bg = register_module("encoder_bg", BackgroundEncoder(arch));
  remover = register_module("remover", AttributeRemover(arch));
  classifier = register_module("classifier", AttributeClassifier(arch, schema_));
  decoder = register_module("decoder", Decoder(arch));
  embeddings = register_module("embeddings", EmbeddingTable(schema_, arch.fg_channels));
}

FeatureBundle AirrModelImpl::encode(const torch::Tensor& images, const torch::Tensor& masks) {
  if (images.dim() != 4 || images.size(2) != arch_.image_size || images.size(3) != arch_.image_size) {
    throw ContractError("encode: expected [B,3," + std::to_string(arch_.image_size) + "," +
                        std::to_string(arch_.image_size) + "] images");
  }
  const auto [fg_img, bg_img] = data::split_fg_bg(images, masks);
  FeatureBundle f;
  f.fg = encoder_fg->forward(fg_img);
  f.bg = encoder_bg->forward(bg_img);
  f.removed = remover->forward(f.fg);
  return f;
}

torch::Tensor AirrModelImpl::decode(const torch::Tensor& injected, const torch::Tensor& bg) {
  decode_calls_->fetch_add(1);
  return decoder->forward(injected, bg);
}

torch::Tensor AirrModelImpl::render(const FeatureBundle& f, const torch::Tensor& labels) {
  return decode(embeddings->inject(f.removed, labels), f.bg);
}

torch::Tensor AirrModelImpl::render_sums(const FeatureBundle& f, const ScaleBias& sums) {
  return decode(inject_sums(f.removed, sums), f.bg);
}

torch::Tensor AirrModelImpl::render_identity(const FeatureBundle& f) {
  return decode(identity_inject(f.removed), f.bg);
}

AirrModelImpl::EditOutput AirrModelImpl::edit(const torch::Tensor& images, const torch::Tensor& masks,
                                               const torch::Tensor& targets, const torch::Tensor& strengths,
                                               const torch::Tensor& sources) {
  torch::NoGradGuard guard;
  const auto f = encode(images, masks);
  EditOutput out;
  out.sources = sources.defined() ? sources.to(torch::kInt64) : classify(f.fg).argmax();
  out.images = render_sums(f, embeddings->blended_sums(out.sources, targets, strengths));
  return out;
}

AirrModelImpl::EditOutput AirrModelImpl::reconstruct(const torch::Tensor& images, const torch::Tensor& masks,
                                                      const torch::Tensor& sources) {
  const auto n = static_cast<int64_t>(schema_->num_categories());
  const auto zeros = torch::zeros({images.size(0), n}, torch::kInt64);
  return edit(images, masks, zeros, zeros.to(torch::kFloat32), sources);
}

torch::Tensor AirrModelImpl::diagnose(const torch::Tensor& images, const torch::Tensor& masks) {
  torch::NoGradGuard guard;
  return render_identity(encode(images, masks));
}

void AirrModelImpl::save_weights(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_module(*encoder_fg, dir / "encoder_fg.pt");
  save_module(*encoder_bg, dir / "encoder_bg.pt");
  save_module(*remover, dir / "remover.pt");
  save_module(*classifier, dir / "classifier.pt");
  save_module(*decoder, dir / "decoder.pt");
  std::ofstream out(dir / "embeddings.json");
  if (!out) throw IoError("cannot write " + (dir / "embeddings.json").string());
  out << embeddings->to_json().dump() << '\n';
}

void AirrModelImpl::load_weights(const std::filesystem::path& dir) {
  load_module(*encoder_fg, dir / "encoder_fg.pt");
  load_module(*encoder_bg, dir / "encoder_bg.pt");
  load_module(*remover, dir / "remover.pt");
  load_module(*classifier, dir / "classifier.pt");
  load_module(*decoder, dir / "decoder.pt");
  std::ifstream in(dir / "embeddings.json");
  if (!in) throw IoError("cannot read " + (dir / "embeddings.json").string());
  try {
    embeddings->load_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed embeddings.json: " + std::string(e.what()));
  }
}

void save_module(const torch::nn::Module& module, const std::filesystem::path& path) {
  torch::serialize::OutputArchive archive;
  module.save(archive);
  try {
    archive.save_to(path.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot write " + path.string());
  }
}

void load_module(torch::nn::Module& module, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing weight file " + path.string());
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
    module.load(archive);
  } catch (const c10::Error& e) {
    throw IoError("cannot load " + path.string() + ": " + e.what_without_backtrace());
  }
}

}  // namespace airr
