#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace airr {

/// Named attribute categories, each with an ordered finite value set.
///
/// Categories and values are addressed by index everywhere inside the
/// library; names only matter at file and network boundaries. The flattened
/// value index `offset(category) + value` is what embedding tables and
/// classifier heads use.
///
/// The canonical text form is a YAML subset:
///
///     categories:
///       - name: color
///         values: [red, green, blue]
///     sha256: <hex digest of everything above this line>
///
/// Parsing accepts any YAML with the same structure; the `sha256` line is
/// optional on input but must match when present.
class AttributeSchema {
 public:
  struct Category {
    std::string name;
    std::vector<std::string> values;
    bool operator==(const Category&) const = default;
  };

  explicit AttributeSchema(std::vector<Category> categories);

  /// color(6), shape(3), size(3), pattern(2).
  static std::shared_ptr<const AttributeSchema> shapeset();

  static std::shared_ptr<const AttributeSchema> parse(std::string_view text);
  static std::shared_ptr<const AttributeSchema> load(const std::filesystem::path& path);
  static std::shared_ptr<const AttributeSchema> from_json(const nlohmann::json& j);

  std::string canonical() const;
  void save(const std::filesystem::path& path) const;
  nlohmann::json to_json() const;

  /// SHA-256 of the canonical body (without the hash line).
  const std::string& hash() const { return hash_; }

  std::size_t num_categories() const { return categories_.size(); }
  std::size_t total_values() const { return total_values_; }
  int cardinality(std::size_t category) const;
  std::size_t offset(std::size_t category) const;
  const Category& category(std::size_t i) const;
  std::span<const Category> categories() const { return categories_; }

  std::size_t category_index(std::string_view name) const;
  int value_index(std::size_t category, std::string_view value) const;

  bool operator==(const AttributeSchema& other) const { return hash_ == other.hash_; }

 private:
  std::string body() const;

  std::vector<Category> categories_;
  std::vector<std::size_t> offsets_;
  std::size_t total_values_ = 0;
  std::string hash_;
};

using SchemaPtr = std::shared_ptr<const AttributeSchema>;

/// One value index per category of a schema.
class AttributeAssignment {
 public:
  AttributeAssignment(SchemaPtr schema, std::vector<int> values);

  static AttributeAssignment from_names(SchemaPtr schema,
                                        const std::map<std::string, std::string>& names);

  int operator[](std::size_t category) const { return values_.at(category); }
  std::span<const int> values() const { return values_; }
  const SchemaPtr& schema() const { return schema_; }
  std::size_t size() const { return values_.size(); }

  /// Copy with one category replaced.
  AttributeAssignment with(std::size_t category, int value) const;

  std::string value_name(std::size_t category) const;
  std::map<std::string, std::string> to_names() const;
  std::string to_string() const;

  bool operator==(const AttributeAssignment& other) const;

 private:
  SchemaPtr schema_;
  std::vector<int> values_;
};

/// One-hot probability vector for `category`.
std::vector<double> one_hot(const AttributeAssignment& assignment, std::size_t category);

/// Number of categories whose values differ. Both must share a schema.
std::size_t hamming(const AttributeAssignment& a, const AttributeAssignment& b);

}  // namespace airr
