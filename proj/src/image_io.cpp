#include "airr/image_io.hpp"

#include <fstream>
#include <iterator>

#include <boost/beast/core/detail/base64.hpp>
#include <png.h>
#include <torch/torch.h>

#include "airr/errors.hpp"

namespace airr {

namespace {

png_uint_32 format_for(int channels) {
  if (channels == 1) return PNG_FORMAT_GRAY;
  if (channels == 3) return PNG_FORMAT_RGB;
  throw ContractError("png: only 1 or 3 channels supported");
}

}  // namespace

std::vector<std::uint8_t> encode_png(const torch::Tensor& chw_u8) {
  if (chw_u8.dim() != 3 || chw_u8.scalar_type() != torch::kUInt8) {
    throw ContractError("png: expected uint8 tensor [C,H,W]");
  }
  const int channels = static_cast<int>(chw_u8.size(0));
  const auto hwc = chw_u8.permute({1, 2, 0}).contiguous();

  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(chw_u8.size(2));
  image.height = static_cast<png_uint_32>(chw_u8.size(1));
  image.format = format_for(channels);

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, hwc.data_ptr<std::uint8_t>(), 0, nullptr)) {
    throw IoError(std::string("png: encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, hwc.data_ptr<std::uint8_t>(), 0, nullptr)) {
    throw IoError(std::string("png: encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

torch::Tensor decode_png(std::span<const std::uint8_t> bytes, int channels) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DataError(std::string("png: malformed image: ") + image.message);
  }
  image.format = format_for(channels);
  auto hwc = torch::empty({image.height, image.width, channels}, torch::kUInt8);
  if (!png_image_finish_read(&image, nullptr, hwc.data_ptr<std::uint8_t>(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError(std::string("png: malformed image: ") + image.message);
  }
  return hwc.permute({2, 0, 1}).contiguous();
}

void write_png(const std::filesystem::path& path, const torch::Tensor& chw_u8) {
  const auto bytes = encode_png(chw_u8);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("png: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("png: short write to " + path.string());
}

torch::Tensor read_png(const std::filesystem::path& path, int channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("png: cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_png(bytes, channels);
}

torch::Tensor to_u8(const torch::Tensor& unit_float) {
  return (unit_float.clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8);
}

torch::Tensor to_unit_float(const torch::Tensor& u8) { return u8.to(torch::kFloat32).div(255.0); }

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  namespace b64 = boost::beast::detail::base64;
  std::vector<std::uint8_t> out(b64::decoded_size(text.size()));
  const auto [written, read] = b64::decode(out.data(), text.data(), text.size());
  if (text.find_first_not_of('=', read) != std::string_view::npos) {
    throw DataError("base64: invalid character in payload");
  }
  out.resize(written);
  return out;
}

torch::Tensor image_grid(const std::vector<torch::Tensor>& images, int columns) {
  if (images.empty()) throw ContractError("image_grid: no images");
  const auto h = images.front().size(1);
  const auto w = images.front().size(2);
  const int rows = static_cast<int>((images.size() + columns - 1) / columns);
  constexpr int kGutter = 2;
  const auto dtype = images.front().scalar_type();
  auto grid = torch::full({3, rows * (h + kGutter) + kGutter, columns * (w + kGutter) + kGutter},
                          dtype == torch::kUInt8 ? 255.0 : 1.0, torch::TensorOptions().dtype(dtype));
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto r = static_cast<int64_t>(i) / columns;
    const auto c = static_cast<int64_t>(i) % columns;
    const auto y = kGutter + r * (h + kGutter);
    const auto x = kGutter + c * (w + kGutter);
    grid.narrow(1, y, h).narrow(2, x, w).copy_(images[i].detach().to(dtype));
  }
  return grid;
}

}  // namespace airr
