#include "airr/schema.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "airr/errors.hpp"
#include "airr/hash.hpp"

namespace airr {

namespace {

bool valid_name(std::string_view s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
           c == '-';
  });
}

}  // namespace

AttributeSchema::AttributeSchema(std::vector<Category> categories) : categories_(std::move(categories)) {
  if (categories_.empty()) throw SchemaError("schema: at least one category required");
  std::set<std::string> names;
  for (const auto& cat : categories_) {
    if (!valid_name(cat.name)) throw SchemaError("schema: invalid category name '" + cat.name + "'");
    if (!names.insert(cat.name).second) throw SchemaError("schema: duplicate category '" + cat.name + "'");
    if (cat.values.size() < 2) throw SchemaError("schema: category '" + cat.name + "' needs >= 2 values");
    std::set<std::string> values;
    for (const auto& v : cat.values) {
      if (!valid_name(v)) throw SchemaError("schema: invalid value name '" + v + "' in '" + cat.name + "'");
      if (!values.insert(v).second) {
        throw SchemaError("schema: duplicate value '" + v + "' in '" + cat.name + "'");
      }
    }
    offsets_.push_back(total_values_);
    total_values_ += cat.values.size();
  }
  hash_ = sha256_hex(body());
}

SchemaPtr AttributeSchema::shapeset() {
  static const SchemaPtr schema = std::make_shared<const AttributeSchema>(std::vector<Category>{
      {"color", {"red", "green", "blue", "yellow", "magenta", "cyan"}},
      {"shape", {"circle", "square", "triangle"}},
      {"size", {"small", "medium", "large"}},
      {"pattern", {"solid", "striped"}},
  });
  return schema;
}

std::string AttributeSchema::body() const {
  std::ostringstream os;
  os << "categories:\n";
  for (const auto& cat : categories_) {
    os << "  - name: " << cat.name << "\n    values: [";
    for (std::size_t i = 0; i < cat.values.size(); ++i) {
      if (i) os << ", ";
      os << cat.values[i];
    }
    os << "]\n";
  }
  return os.str();
}

std::string AttributeSchema::canonical() const { return body() + "sha256: " + hash_ + "\n"; }

SchemaPtr AttributeSchema::parse(std::string_view text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    throw SchemaError(std::string("schema: parse error: ") + e.what());
  }
  if (!root.IsMap() || !root["categories"] || !root["categories"].IsSequence()) {
    throw SchemaError("schema: expected a 'categories' list");
  }
  std::vector<Category> cats;
  try {
    for (const auto& node : root["categories"]) {
      if (!node["name"] || !node["values"] || !node["values"].IsSequence()) {
        throw SchemaError("schema: each category needs 'name' and a 'values' list");
      }
      Category c;
      c.name = node["name"].as<std::string>();
      for (const auto& v : node["values"]) c.values.push_back(v.as<std::string>());
      cats.push_back(std::move(c));
    }
  } catch (const YAML::Exception& e) {
    throw SchemaError(std::string("schema: ") + e.what());
  }
  auto schema = std::make_shared<const AttributeSchema>(std::move(cats));
  if (root["sha256"]) {
    const auto declared = root["sha256"].as<std::string>();
    if (declared != schema->hash()) {
      throw SchemaError("schema: content hash mismatch (declared " + declared + ", computed " +
                        schema->hash() + ")");
    }
  }
  return schema;
}

SchemaPtr AttributeSchema::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("schema: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void AttributeSchema::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("schema: cannot write " + path.string());
  out << canonical();
}

nlohmann::json AttributeSchema::to_json() const {
  nlohmann::json cats = nlohmann::json::array();
  for (const auto& c : categories_) cats.push_back({{"name", c.name}, {"values", c.values}});
  return {{"categories", cats}, {"sha256", hash_}};
}

SchemaPtr AttributeSchema::from_json(const nlohmann::json& j) {
  std::vector<Category> cats;
  try {
    for (const auto& c : j.at("categories")) {
      cats.push_back({c.at("name").get<std::string>(), c.at("values").get<std::vector<std::string>>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("schema: ") + e.what());
  }
  auto schema = std::make_shared<const AttributeSchema>(std::move(cats));
  if (j.contains("sha256") && j["sha256"].get<std::string>() != schema->hash()) {
    throw SchemaError("schema: content hash mismatch");
  }
  return schema;
}

int AttributeSchema::cardinality(std::size_t category) const {
  return static_cast<int>(this->category(category).values.size());
}

std::size_t AttributeSchema::offset(std::size_t category) const {
  if (category >= offsets_.size()) {
    throw SchemaError("schema: category index " + std::to_string(category) + " out of range");
  }
  return offsets_[category];
}

const AttributeSchema::Category& AttributeSchema::category(std::size_t i) const {
  if (i >= categories_.size()) {
    throw SchemaError("schema: category index " + std::to_string(i) + " out of range");
  }
  return categories_[i];
}

std::size_t AttributeSchema::category_index(std::string_view name) const {
  for (std::size_t i = 0; i < categories_.size(); ++i) {
    if (categories_[i].name == name) return i;
  }
  throw SchemaError("schema: unknown category '" + std::string(name) + "'");
}

int AttributeSchema::value_index(std::size_t category, std::string_view value) const {
  const auto& values = this->category(category).values;
  auto it = std::find(values.begin(), values.end(), value);
  if (it == values.end()) {
    throw SchemaError("schema: unknown value '" + std::string(value) + "' for category '" +
                      categories_[category].name + "'");
  }
  return static_cast<int>(it - values.begin());
}

AttributeAssignment::AttributeAssignment(SchemaPtr schema, std::vector<int> values)
    : schema_(std::move(schema)), values_(std::move(values)) {
  if (!schema_) throw SchemaError("assignment: null schema");
  if (values_.size() != schema_->num_categories()) {
    throw SchemaError("assignment: expected " + std::to_string(schema_->num_categories()) +
                      " values, got " + std::to_string(values_.size()));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (values_[i] < 0 || values_[i] >= schema_->cardinality(i)) {
      throw SchemaError("assignment: value index " + std::to_string(values_[i]) + " out of range for '" +
                        schema_->category(i).name + "'");
    }
  }
}

AttributeAssignment AttributeAssignment::from_names(SchemaPtr schema,
                                                    const std::map<std::string, std::string>& names) {
  std::vector<int> values(schema->num_categories(), -1);
  for (const auto& [cat, value] : names) {
    const auto i = schema->category_index(cat);
    values[i] = schema->value_index(i, value);
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] < 0) throw SchemaError("assignment: missing category '" + schema->category(i).name + "'");
  }
  return AttributeAssignment(std::move(schema), std::move(values));
}

AttributeAssignment AttributeAssignment::with(std::size_t category, int value) const {
  auto values = values_;
  if (category >= values.size()) throw SchemaError("assignment: category index out of range");
  values[category] = value;
  return AttributeAssignment(schema_, std::move(values));
}

std::string AttributeAssignment::value_name(std::size_t category) const {
  return schema_->category(category).values[values_.at(category)];
}

std::map<std::string, std::string> AttributeAssignment::to_names() const {
  std::map<std::string, std::string> out;
  for (std::size_t i = 0; i < values_.size(); ++i) out[schema_->category(i).name] = value_name(i);
  return out;
}

std::string AttributeAssignment::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (i) out += ',';
    out += schema_->category(i).name + '=' + value_name(i);
  }
  return out;
}

bool AttributeAssignment::operator==(const AttributeAssignment& other) const {
  return (schema_ == other.schema_ || *schema_ == *other.schema_) && values_ == other.values_;
}

std::vector<double> one_hot(const AttributeAssignment& assignment, std::size_t category) {
  const auto& schema = *assignment.schema();
  std::vector<double> out(static_cast<std::size_t>(schema.cardinality(category)), 0.0);
  out[static_cast<std::size_t>(assignment[category])] = 1.0;
  return out;
}

std::size_t hamming(const AttributeAssignment& a, const AttributeAssignment& b) {
  if (!(a.schema() == b.schema() || *a.schema() == *b.schema())) {
    throw SchemaError("hamming: assignments use different schemas");
  }
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

}  // namespace airr
