#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <torch/types.h>

namespace airr {

// PNG codec over uint8 tensors laid out [C, H, W] with C = 1 (gray) or 3 (RGB).
std::vector<std::uint8_t> encode_png(const torch::Tensor& chw_u8);
torch::Tensor decode_png(std::span<const std::uint8_t> bytes, int channels);

void write_png(const std::filesystem::path& path, const torch::Tensor& chw_u8);
torch::Tensor read_png(const std::filesystem::path& path, int channels);

// [0,1] float <-> uint8 with round-to-nearest.
torch::Tensor to_u8(const torch::Tensor& unit_float);
torch::Tensor to_unit_float(const torch::Tensor& u8);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Lays out equally sized [3,H,W] images into a grid, row-major, 2 px white
/// gutter. The grid has the dtype of the first image.
torch::Tensor image_grid(const std::vector<torch::Tensor>& images, int columns);

}  // namespace airr
