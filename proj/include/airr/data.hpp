#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <torch/types.h>

#include "airr/schema.hpp"

namespace airr::data {

using Rng = std::mt19937_64;

/// RGB image [3,H,W] in [0,1], binary mask [1,H,W] (1 = object of interest).
struct LabeledImage {
  std::string id;
  torch::Tensor image;
  torch::Tensor mask;
  AttributeAssignment attributes;
};

// ---------------------------------------------------------------------------
// ShapeSet: one filled shape over a cluttered gray background.
//
// Every shape is parameterized by a nominal radius r and drawn with area
// pi*r^2 regardless of its kind: circles have radius r, squares half-side
// r*sqrt(pi)/2, upward equilateral triangles circumradius
// r*sqrt(4*pi/(3*sqrt(3))). The size label fixes the radius range:
//   small [7,9]   medium [11,13]   large [15,17]   (pixels)
// Pixels are inside the mask when their center is inside the shape.
// ---------------------------------------------------------------------------

inline constexpr int kShapeSetSide = 64;
inline constexpr int kMaxJitter = 4;

enum class ShapeKind : int { kCircle = 0, kSquare = 1, kTriangle = 2 };

struct RadiusRange {
  double lo;
  double hi;
};

RadiusRange size_radius_range(int size_index);

/// Continuous perimeter of a shape with nominal radius r.
double shape_perimeter(ShapeKind kind, double r);

/// Canonical RGB of each ShapeSet color value, in schema order.
std::array<float, 3> palette_color(int color_index);

/// Deterministic rendering of item `index` for a given dataset seed.
LabeledImage render_shapeset_item(std::uint64_t seed, std::size_t index);

/// Writes images/{id}.png, masks/{id}.png, labels.csv and schema.txt under `out`.
/// Items are rendered in parallel from per-item sub-seeds; output bytes do not
/// depend on the thread count.
void generate_shapeset(const std::filesystem::path& out, std::uint64_t seed, std::size_t count,
                       unsigned threads = 0);

/// (image * mask, image * (1 - mask)). Works on [3,H,W] or batched [B,3,H,W].
std::pair<torch::Tensor, torch::Tensor> split_fg_bg(const torch::Tensor& image, const torch::Tensor& mask);

struct Batch {
  torch::Tensor images;  // [B,3,H,W] float
  torch::Tensor masks;   // [B,1,H,W] float
  torch::Tensor labels;  // [B,n] int64
  std::vector<std::size_t> indices;
};

/// Labels tensor [B, n] from assignments.
torch::Tensor labels_tensor(std::span<const AttributeAssignment> assignments);

/// In-memory dataset. Pixels are held as uint8 and converted per batch.
class Dataset {
 public:
  static Dataset load(const std::filesystem::path& dir);

  std::size_t size() const { return ids_.size(); }
  const SchemaPtr& schema() const { return schema_; }
  const std::string& id(std::size_t i) const { return ids_.at(i); }
  const AttributeAssignment& attributes(std::size_t i) const { return labels_.at(i); }
  std::span<const AttributeAssignment> all_attributes() const { return labels_; }

  LabeledImage item(std::size_t i) const;
  Batch batch(std::span<const std::size_t> indices) const;
  torch::Tensor image(std::size_t i) const;

  int height() const { return static_cast<int>(images_.size(2)); }
  int width() const { return static_cast<int>(images_.size(3)); }

 private:
  SchemaPtr schema_;
  std::vector<std::string> ids_;
  std::vector<AttributeAssignment> labels_;
  torch::Tensor images_;  // [N,3,H,W] uint8
  torch::Tensor masks_;   // [N,1,H,W] uint8 (0/1)
};

/// Disjoint train/test index lists covering [0, n).
struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;

  static DatasetSplit make(std::size_t n, std::size_t test_count, std::uint64_t seed);
};

/// Attribute tuple -> dataset indices carrying exactly that tuple.
class ReferenceIndex {
 public:
  ReferenceIndex() = default;
  ReferenceIndex(const Dataset& dataset, std::span<const std::size_t> indices);
  ReferenceIndex(SchemaPtr schema, std::span<const AttributeAssignment> labels,
                 std::span<const std::size_t> indices);

  bool empty() const { return by_tuple_.empty(); }
  const std::vector<std::vector<int>>& realized() const { return realized_; }
  /// Empty span when the tuple is not realized.
  std::span<const std::size_t> matches(const AttributeAssignment& tuple) const;
  const SchemaPtr& schema() const { return schema_; }

 private:
  SchemaPtr schema_;
  std::map<std::vector<int>, std::vector<std::size_t>> by_tuple_;
  std::vector<std::vector<int>> realized_;
};

/// Uniform draw over realized tuples. `fixed[i] == true` keeps category i at
/// the source value.
AttributeAssignment sample_target(const AttributeAssignment& source, Rng& rng, const ReferenceIndex& realized,
                                  const std::vector<bool>& fixed = {});

/// Uniform draw among the dataset indices carrying exactly `target`.
std::size_t lookup_reference(const AttributeAssignment& target, const ReferenceIndex& index, Rng& rng);

}  // namespace airr::data
