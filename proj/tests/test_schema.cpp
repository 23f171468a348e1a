#include "testing.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "airr/errors.hpp"
#include "airr/schema.hpp"

using namespace airr;

namespace {

SchemaPtr rgb_schema() {
  return std::make_shared<const AttributeSchema>(
      std::vector<AttributeSchema::Category>{{"color", {"red", "green", "blue"}}});
}

SchemaPtr three_category_schema() {
  return std::make_shared<const AttributeSchema>(std::vector<AttributeSchema::Category>{
      {"color", {"red", "green", "blue"}}, {"shape", {"circle", "square"}}, {"size", {"s", "m", "l"}}});
}

}  // namespace

TEST_CASE("one_hot places a single 1 at the assigned index") {
  const auto schema = rgb_schema();
  CHECK(one_hot(AttributeAssignment(schema, {1}), 0) == std::vector<double>{0, 1, 0});
  CHECK(one_hot(AttributeAssignment(schema, {0}), 0) == std::vector<double>{1, 0, 0});
}

TEST_CASE("one_hot rejects an out-of-range category") {
  const auto schema = std::make_shared<const AttributeSchema>(
      std::vector<AttributeSchema::Category>{{"a", {"x", "y"}}, {"b", {"x", "y"}}});
  const AttributeAssignment a(schema, {0, 1});
  CHECK_THROWS_AS(one_hot(a, 5), SchemaError);
}

TEST_CASE("hamming counts differing categories") {
  const auto schema = three_category_schema();
  const AttributeAssignment a(schema, {0, 1, 2});
  CHECK(hamming(a, a) == 0);
  CHECK(hamming(a, AttributeAssignment(schema, {2, 1, 0})) == 2);
  CHECK_THROWS_AS(hamming(a, AttributeAssignment(rgb_schema(), {0})), SchemaError);
}

TEST_CASE("hamming is a metric and one_hot round-trips through argmax") {
  const auto schema = AttributeSchema::shapeset();
  std::mt19937_64 rng(11);
  auto random_assignment = [&] {
    std::vector<int> v;
    for (std::size_t i = 0; i < schema->num_categories(); ++i) {
      v.push_back(std::uniform_int_distribution<int>(0, schema->cardinality(i) - 1)(rng));
    }
    return AttributeAssignment(schema, v);
  };
  for (int trial = 0; trial < 500; ++trial) {
    const auto a = random_assignment();
    const auto b = random_assignment();
    const auto c = random_assignment();
    CHECK(hamming(a, b) == hamming(b, a));
    CHECK(hamming(a, c) <= hamming(a, b) + hamming(b, c));
    CHECK((hamming(a, b) == 0) == (a == b));
    for (std::size_t i = 0; i < schema->num_categories(); ++i) {
      const auto v = one_hot(a, i);
      CHECK(std::accumulate(v.begin(), v.end(), 0.0) == 1.0);
      CHECK(std::max_element(v.begin(), v.end()) - v.begin() == a[i]);
    }
  }
}

TEST_CASE("schema invariants are enforced") {
  using C = AttributeSchema::Category;
  CHECK_THROWS_AS(AttributeSchema(std::vector<C>{}), SchemaError);
  CHECK_THROWS_AS(AttributeSchema({C{"a", {"x"}}}), SchemaError);
  CHECK_THROWS_AS(AttributeSchema({C{"a", {"x", "x"}}}), SchemaError);
  CHECK_THROWS_AS(AttributeSchema({C{"a", {"x", "y"}}, C{"a", {"x", "y"}}}), SchemaError);
  CHECK_THROWS_AS(AttributeSchema({C{"a b", {"x", "y"}}}), SchemaError);
}

TEST_CASE("canonical form round-trips byte-identically") {
  const auto schema = AttributeSchema::shapeset();
  const auto text = schema->canonical();
  const auto reparsed = AttributeSchema::parse(text);
  CHECK(reparsed->canonical() == text);
  CHECK(*reparsed == *schema);
  CHECK(AttributeSchema::from_json(schema->to_json())->canonical() == text);

  // Hand-edited block style without a hash is accepted and canonicalized.
  const auto loose = AttributeSchema::parse(
      "categories:\n  - values:\n      - red\n      - green\n    name: color\n");
  CHECK(loose->canonical().starts_with("categories:\n  - name: color\n    values: [red, green]\n"));
}

TEST_CASE("a tampered hash is rejected") {
  auto text = AttributeSchema::shapeset()->canonical();
  text.replace(text.find("sha256: ") + 8, 4, "0000");
  CHECK_THROWS_AS(AttributeSchema::parse(text), SchemaError);
}

TEST_CASE("assignments validate indices and resolve names") {
  const auto schema = AttributeSchema::shapeset();
  CHECK_THROWS_AS(AttributeAssignment(schema, {0, 0, 0}), SchemaError);
  CHECK_THROWS_AS(AttributeAssignment(schema, {6, 0, 0, 0}), SchemaError);
  const auto a = AttributeAssignment::from_names(
      schema, {{"color", "blue"}, {"shape", "square"}, {"size", "large"}, {"pattern", "striped"}});
  CHECK(std::vector<int>(a.values().begin(), a.values().end()) == std::vector<int>{2, 1, 2, 1});
  CHECK(a.to_string() == "color=blue,shape=square,size=large,pattern=striped");
  CHECK_THROWS_AS(AttributeAssignment::from_names(schema, {{"color", "teal"}}), SchemaError);
  CHECK(a.with(0, 5)[0] == 5);
}
