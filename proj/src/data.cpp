#include "airr/data.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <mutex>
#include <thread>

#include <torch/torch.h>

#include "airr/errors.hpp"
#include "airr/image_io.hpp"

namespace airr::data {

namespace fs = std::filesystem;

namespace {

constexpr std::array<std::array<float, 3>, 6> kPalette{{
    {0.90f, 0.10f, 0.10f},  // red
    {0.10f, 0.80f, 0.10f},  // green
    {0.10f, 0.20f, 0.90f},  // blue
    {0.90f, 0.90f, 0.10f},  // yellow
    {0.90f, 0.10f, 0.90f},  // magenta
    {0.10f, 0.90f, 0.90f},  // cyan
}};

constexpr float kStripeShade = 0.4f;
constexpr int kStripePeriod = 6;
constexpr int kStripeWidth = 2;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double square_half_side(double r) { return r * std::sqrt(std::numbers::pi) / 2.0; }

double triangle_circumradius(double r) {
  return r * std::sqrt(4.0 * std::numbers::pi / (3.0 * std::sqrt(3.0)));
}

bool inside(ShapeKind kind, double r, double dx, double dy) {
  switch (kind) {
    case ShapeKind::kCircle:
      return dx * dx + dy * dy <= r * r;
    case ShapeKind::kSquare: {
      const double s = square_half_side(r);
      return std::abs(dx) <= s && std::abs(dy) <= s;
    }
    case ShapeKind::kTriangle: {
      // Upward equilateral triangle, centroid at the origin, y grows downward.
      const double R = triangle_circumradius(r);
      const double base_y = R / 2.0;
      if (dy > base_y) return false;
      // Half-width at height dy grows linearly from the apex (dy = -R) to the base.
      const double half_width = (dy + R) / std::sqrt(3.0);
      return dy >= -R && std::abs(dx) <= half_width;
    }
  }
  return false;
}

std::string format_id(std::size_t index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index;
  return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) {
    if (!field.empty() && field.back() == '\r') field.pop_back();
    out.push_back(field);
  }
  return out;
}

}  // namespace

RadiusRange size_radius_range(int size_index) {
  switch (size_index) {
    case 0:
      return {7.0, 9.0};
    case 1:
      return {11.0, 13.0};
    case 2:
      return {15.0, 17.0};
    default:
      throw ContractError("shapeset: size index out of range");
  }
}

double shape_perimeter(ShapeKind kind, double r) {
  switch (kind) {
    case ShapeKind::kCircle:
      return 2.0 * std::numbers::pi * r;
    case ShapeKind::kSquare:
      return 8.0 * square_half_side(r);
    case ShapeKind::kTriangle:
      return 3.0 * std::sqrt(3.0) * triangle_circumradius(r);
  }
  return 0.0;
}

std::array<float, 3> palette_color(int color_index) {
  if (color_index < 0 || color_index >= static_cast<int>(kPalette.size())) {
    throw ContractError("shapeset: color index out of range");
  }
  return kPalette[static_cast<std::size_t>(color_index)];
}

LabeledImage render_shapeset_item(std::uint64_t seed, std::size_t index) {
  constexpr int N = kShapeSetSide;
  Rng rng(splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(index)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  auto pick = [&](int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); };

  const auto schema = AttributeSchema::shapeset();
  const int color = pick(6);
  const int shape = pick(3);
  const int size = pick(3);
  const int pattern = pick(2);

  const auto [r_lo, r_hi] = size_radius_range(size);
  const double radius = uniform(r_lo, r_hi);
  const double cx = N / 2.0 + pick(2 * kMaxJitter + 1) - kMaxJitter;
  const double cy = N / 2.0 + pick(2 * kMaxJitter + 1) - kMaxJitter;
  const int stripe_phase = pick(kStripePeriod);

  const double gray = uniform(0.3, 0.7);
  const double grad_angle = uniform(0.0, 2.0 * std::numbers::pi);
  const double grad_amp = uniform(0.05, 0.2);

  std::vector<float> rgb(3 * N * N);
  std::vector<std::uint8_t> mask(N * N);
  auto at = [&](int c, int y, int x) -> float& { return rgb[(c * N + y) * N + x]; };

  const auto fill = palette_color(color);
  for (int y = 0; y < N; ++y) {
    for (int x = 0; x < N; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      const bool fg = inside(static_cast<ShapeKind>(shape), radius, px - cx, py - cy);
      mask[y * N + x] = fg ? 1 : 0;
      if (fg) {
        const bool dark = pattern == 1 && (y + stripe_phase) % kStripePeriod < kStripeWidth;
        const float shade = dark ? kStripeShade : 1.0f;
        for (int c = 0; c < 3; ++c) {
          at(c, y, x) = static_cast<float>(fill[c] * shade + uniform(-0.03, 0.03));
        }
      } else {
        const double t = ((px - N / 2.0) * std::cos(grad_angle) + (py - N / 2.0) * std::sin(grad_angle)) / (N / 2.0);
        const double g = gray + grad_amp * t;
        for (int c = 0; c < 3; ++c) at(c, y, x) = static_cast<float>(g + uniform(-0.03, 0.03));
      }
    }
  }

  // Distractor-colored specks, background only.
  const int specks = 25 + pick(21);
  for (int s = 0; s < specks; ++s) {
    const auto speck = palette_color(pick(6));
    const int side = 1 + pick(2);
    const int x0 = pick(N - side + 1);
    const int y0 = pick(N - side + 1);
    for (int y = y0; y < y0 + side; ++y) {
      for (int x = x0; x < x0 + side; ++x) {
        if (mask[y * N + x]) continue;
        for (int c = 0; c < 3; ++c) at(c, y, x) = 0.3f * at(c, y, x) + 0.7f * speck[c];
      }
    }
  }

  for (auto& v : rgb) v = std::clamp(v, 0.0f, 1.0f);

  auto image = torch::from_blob(rgb.data(), {3, N, N}, torch::kFloat32).clone();
  // Quantize so that in-memory items equal what a reload from disk yields.
  image = to_unit_float(to_u8(image));
  auto mask_t = torch::from_blob(mask.data(), {1, N, N}, torch::kUInt8).to(torch::kFloat32);

  return LabeledImage{format_id(index), image, mask_t,
                      AttributeAssignment(schema, {color, shape, size, pattern})};
}

void generate_shapeset(const fs::path& out, std::uint64_t seed, std::size_t count, unsigned threads) {
  if (count < 100) throw ConfigError("generate-data: count must be >= 100");
  std::error_code ec;
  fs::create_directories(out / "images", ec);
  fs::create_directories(out / "masks", ec);
  if (ec || !fs::is_directory(out / "images") || !fs::is_directory(out / "masks")) {
    throw IoError("generate-data: cannot create output directories under " + out.string());
  }

  const auto schema = AttributeSchema::shapeset();
  std::vector<std::vector<int>> labels(count);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::string failure;
  std::mutex failure_mu;

  auto worker = [&] {
    torch::NoGradGuard no_grad;
    for (std::size_t i = next++; i < count && !failed; i = next++) {
      try {
        const auto item = render_shapeset_item(seed, i);
        write_png(out / "images" / (item.id + ".png"), to_u8(item.image));
        write_png(out / "masks" / (item.id + ".png"), item.mask.mul(255).to(torch::kUInt8));
        labels[i].assign(item.attributes.values().begin(), item.attributes.values().end());
      } catch (const std::exception& e) {
        std::lock_guard lock(failure_mu);
        failed = true;
        failure = e.what();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failed) throw IoError("generate-data: " + failure);

  std::ofstream csv(out / "labels.csv", std::ios::binary);
  if (!csv) throw IoError("generate-data: cannot write labels.csv");
  csv << "id";
  for (const auto& cat : schema->categories()) csv << ',' << cat.name;
  csv << '\n';
  for (std::size_t i = 0; i < count; ++i) {
    csv << format_id(i);
    for (std::size_t c = 0; c < labels[i].size(); ++c) csv << ',' << schema->category(c).values[labels[i][c]];
    csv << '\n';
  }
  schema->save(out / "schema.txt");
}

std::pair<torch::Tensor, torch::Tensor> split_fg_bg(const torch::Tensor& image, const torch::Tensor& mask) {
  if (image.dim() != mask.dim() || image.size(-1) != mask.size(-1) || image.size(-2) != mask.size(-2)) {
    throw ContractError("split_fg_bg: image and mask spatial dims differ");
  }
  return {image * mask, image * (1.0 - mask)};
}

torch::Tensor labels_tensor(std::span<const AttributeAssignment> assignments) {
  if (assignments.empty()) return torch::empty({0, 0}, torch::kInt64);
  const auto n = static_cast<int64_t>(assignments.front().size());
  auto out = torch::empty({static_cast<int64_t>(assignments.size()), n}, torch::kInt64);
  auto acc = out.accessor<int64_t, 2>();
  for (std::size_t b = 0; b < assignments.size(); ++b) {
    for (int64_t c = 0; c < n; ++c) acc[static_cast<int64_t>(b)][c] = assignments[b][static_cast<std::size_t>(c)];
  }
  return out;
}

Dataset Dataset::load(const fs::path& dir) {
  Dataset ds;
  ds.schema_ = AttributeSchema::load(dir / "schema.txt");
  std::ifstream csv(dir / "labels.csv");
  if (!csv) throw IoError("dataset: cannot read " + (dir / "labels.csv").string());
  std::string line;
  std::getline(csv, line);
  const auto header = split_csv_line(line);
  if (header.empty() || header[0] != "id") throw DataError("dataset: labels.csv must start with an 'id' column");
  std::vector<std::size_t> column_category;
  for (std::size_t i = 1; i < header.size(); ++i) column_category.push_back(ds.schema_->category_index(header[i]));
  if (column_category.size() != ds.schema_->num_categories()) {
    throw DataError("dataset: labels.csv must have one column per schema category");
  }
  while (std::getline(csv, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) throw DataError("dataset: malformed labels row '" + line + "'");
    std::vector<int> values(ds.schema_->num_categories());
    for (std::size_t i = 1; i < fields.size(); ++i) {
      const auto cat = column_category[i - 1];
      values[cat] = ds.schema_->value_index(cat, fields[i]);
    }
    ds.ids_.push_back(fields[0]);
    ds.labels_.emplace_back(ds.schema_, std::move(values));
  }
  if (ds.ids_.empty()) throw DataError("dataset: no items in " + dir.string());

  std::vector<torch::Tensor> images;
  std::vector<torch::Tensor> masks;
  images.reserve(ds.ids_.size());
  masks.reserve(ds.ids_.size());
  for (const auto& id : ds.ids_) {
    auto img = read_png(dir / "images" / (id + ".png"), 3);
    auto m = read_png(dir / "masks" / (id + ".png"), 1).gt(127).to(torch::kUInt8);
    if (!images.empty() && (img.sizes() != images.front().sizes())) {
      throw DataError("dataset: image " + id + " has different dimensions");
    }
    if (img.size(1) != m.size(1) || img.size(2) != m.size(2)) {
      throw DataError("dataset: mask " + id + " does not match its image");
    }
    images.push_back(std::move(img));
    masks.push_back(std::move(m));
  }
  ds.images_ = torch::stack(images);
  ds.masks_ = torch::stack(masks);
  return ds;
}

LabeledImage Dataset::item(std::size_t i) const {
  return LabeledImage{ids_.at(i), to_unit_float(images_[static_cast<int64_t>(i)]),
                      masks_[static_cast<int64_t>(i)].to(torch::kFloat32), labels_.at(i)};
}

torch::Tensor Dataset::image(std::size_t i) const { return to_unit_float(images_[static_cast<int64_t>(i)]); }

Batch Dataset::batch(std::span<const std::size_t> indices) const {
  std::vector<int64_t> idx(indices.begin(), indices.end());
  for (auto i : idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= size()) throw ContractError("dataset: batch index out of range");
  }
  auto index = torch::tensor(idx, torch::kInt64);
  std::vector<AttributeAssignment> labels;
  labels.reserve(indices.size());
  for (auto i : indices) labels.push_back(labels_[i]);
  return Batch{to_unit_float(images_.index_select(0, index)), masks_.index_select(0, index).to(torch::kFloat32),
               labels_tensor(labels), {indices.begin(), indices.end()}};
}

DatasetSplit DatasetSplit::make(std::size_t n, std::size_t test_count, std::uint64_t seed) {
  if (test_count >= n) throw ConfigError("split: test count must be smaller than the dataset");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(splitmix64(seed));
  std::shuffle(order.begin(), order.end(), rng);
  DatasetSplit split;
  split.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test_count));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(test_count), order.end());
  std::sort(split.test.begin(), split.test.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

ReferenceIndex::ReferenceIndex(const Dataset& dataset, std::span<const std::size_t> indices)
    : ReferenceIndex(dataset.schema(), dataset.all_attributes(), indices) {}

ReferenceIndex::ReferenceIndex(SchemaPtr schema, std::span<const AttributeAssignment> labels,
                               std::span<const std::size_t> indices)
    : schema_(std::move(schema)) {
  for (auto i : indices) {
    const auto& a = labels[i];
    by_tuple_[std::vector<int>(a.values().begin(), a.values().end())].push_back(i);
  }
  for (const auto& [tuple, ids] : by_tuple_) realized_.push_back(tuple);
}

std::span<const std::size_t> ReferenceIndex::matches(const AttributeAssignment& tuple) const {
  auto it = by_tuple_.find(std::vector<int>(tuple.values().begin(), tuple.values().end()));
  if (it == by_tuple_.end()) return {};
  return it->second;
}

AttributeAssignment sample_target(const AttributeAssignment& source, Rng& rng, const ReferenceIndex& realized,
                                  const std::vector<bool>& fixed) {
  if (realized.empty()) throw DataError("sample_target: no realized attribute tuples");
  if (!fixed.empty() && fixed.size() != source.size()) {
    throw ContractError("sample_target: category mask size does not match schema");
  }
  const auto& tuples = realized.realized();
  auto allowed = [&](const std::vector<int>& t) {
    for (std::size_t c = 0; c < fixed.size(); ++c) {
      if (fixed[c] && t[c] != source[c]) return false;
    }
    return true;
  };
  if (fixed.empty() || std::none_of(fixed.begin(), fixed.end(), [](bool b) { return b; })) {
    const auto k = std::uniform_int_distribution<std::size_t>(0, tuples.size() - 1)(rng);
    return AttributeAssignment(source.schema(), tuples[k]);
  }
  std::vector<std::size_t> candidates;
  for (std::size_t k = 0; k < tuples.size(); ++k) {
    if (allowed(tuples[k])) candidates.push_back(k);
  }
  if (candidates.empty()) throw DataError("sample_target: no realized tuple satisfies the category mask");
  const auto k = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
  return AttributeAssignment(source.schema(), tuples[k]);
}

std::size_t lookup_reference(const AttributeAssignment& target, const ReferenceIndex& index, Rng& rng) {
  const auto ids = index.matches(target);
  if (ids.empty()) throw DataError("lookup_reference: tuple " + target.to_string() + " is not realized");
  return ids[std::uniform_int_distribution<std::size_t>(0, ids.size() - 1)(rng)];
}

}  // namespace airr::data
