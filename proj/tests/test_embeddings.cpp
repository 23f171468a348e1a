#include "testing.hpp"

#include "airr/embeddings.hpp"
#include "airr/errors.hpp"

using namespace airr;

namespace {

SchemaPtr single_category() {
  return std::make_shared<const AttributeSchema>(
      std::vector<AttributeSchema::Category>{{"color", {"red", "green", "blue"}}});
}

void set_identity(EmbeddingTable& t) {
  torch::NoGradGuard g;
  t->scale().fill_(1.0);
  t->bias().fill_(0.0);
}

torch::Tensor labels(std::vector<int64_t> v, int64_t n) {
  return torch::tensor(v, torch::kInt64).view({-1, n});
}

}  // namespace

TEST_CASE("identity pair on a single category is the exact identity") {
  EmbeddingTable t(single_category(), 8);
  set_identity(t);
  const auto x = torch::randn({2, 8, 4, 4});
  CHECK(torch::equal(t->inject(x, labels({1, 2}, 1)), x));
}

TEST_CASE("identity pairs over n categories multiply by n") {
  const auto schema = AttributeSchema::shapeset();
  EmbeddingTable t(schema, 8);
  set_identity(t);
  const auto x = torch::randn({1, 8, 4, 4});
  CHECK(torch::allclose(t->inject(x, labels({2, 1, 0, 1}, 4)), 4 * x, 0, 0));
}

TEST_CASE("inject matches a per-channel loop") {
  torch::manual_seed(3);
  const auto schema = AttributeSchema::shapeset();
  EmbeddingTable t(schema, 6, 0.5);
  const auto x = torch::randn({2, 6, 3, 3});
  const auto lab = labels({5, 2, 1, 0, 0, 1, 2, 1}, 4);
  const auto out = t->inject(x, lab);
  auto scale = t->scale().detach();
  auto bias = t->bias().detach();
  for (int64_t b = 0; b < 2; ++b) {
    for (int64_t c = 0; c < 6; ++c) {
      // Same single-precision arithmetic as the tensor path.
      float beta = 0, gamma = 0;
      for (std::size_t i = 0; i < 4; ++i) {
        const auto row = static_cast<int64_t>(schema->offset(i)) + lab[b][static_cast<int64_t>(i)].item<int64_t>();
        beta += scale[row][c].item<float>();
        gamma += bias[row][c].item<float>();
      }
      for (int64_t y = 0; y < 3; ++y) {
        for (int64_t xx = 0; xx < 3; ++xx) {
          const float expect = beta * x[b][c][y][xx].item<float>() + gamma;
          CHECK(std::abs(out[b][c][y][xx].item<float>() - expect) <= 1e-6f);
        }
      }
    }
  }
}

TEST_CASE("inject rejects missing entries") {
  EmbeddingTable t(AttributeSchema::shapeset(), 4);
  const auto x = torch::randn({1, 4, 2, 2});
  CHECK_THROWS_AS(t->inject(x, labels({6, 0, 0, 0}, 4)), ContractError);
  CHECK_THROWS_AS(t->inject(x, labels({0, 0, 0, -1}, 4)), ContractError);
  CHECK_THROWS_AS(t->inject(x, labels({0, 0, 0}, 3)), ContractError);
  CHECK_THROWS_AS(t->entry(4, 0), ContractError);
}

TEST_CASE("inject is affine in the removed features") {
  torch::manual_seed(5);
  EmbeddingTable t(AttributeSchema::shapeset(), 5, 0.3);
  const auto lab = labels({1, 1, 1, 1}, 4);
  const auto zero = torch::zeros({1, 5, 3, 3});
  const auto at_zero = t->inject(zero, lab);
  const auto sums = t->sums(lab);
  CHECK(torch::allclose(at_zero, sums.bias.view({1, 5, 1, 1}).expand({1, 5, 3, 3})));
  for (int k = 0; k < 10; ++k) {
    const auto x = torch::randn({1, 5, 3, 3});
    const auto y = torch::randn({1, 5, 3, 3});
    const double alpha = (k - 5) * 0.7;
    const auto lhs = t->inject(alpha * x + y, lab) - at_zero;
    const auto rhs = alpha * (t->inject(x, lab) - at_zero) + (t->inject(y, lab) - at_zero);
    CHECK(torch::allclose(lhs, rhs, 1e-4, 1e-5));
  }
}

TEST_CASE("identity_inject returns its input bitwise") {
  const auto x = torch::randn({2, 3, 4, 4});
  CHECK(torch::equal(identity_inject(x), x));
}

TEST_CASE("interpolate endpoints, midpoint and affinity") {
  torch::manual_seed(7);
  EmbeddingTable t(AttributeSchema::shapeset(), 16, 0.5);
  const auto src = t->entry(0, 1);
  const auto tgt = t->entry(0, 4);
  const auto at0 = t->interpolate(0, 1, 4, 0.0);
  const auto at1 = t->interpolate(0, 1, 4, 1.0);
  CHECK(torch::equal(at0.scale, src.scale));
  CHECK(torch::equal(at0.bias, src.bias));
  CHECK(torch::equal(at1.scale, tgt.scale));
  CHECK(torch::equal(at1.bias, tgt.bias));
  const auto mid = t->interpolate(0, 1, 4, 0.5);
  CHECK(torch::allclose(mid.scale, (src.scale + tgt.scale) / 2, 0, 1e-6));
  CHECK(torch::allclose(mid.bias, (src.bias + tgt.bias) / 2, 0, 1e-6));
  for (double c1 : {0.1, 0.3}) {
    for (double c2 : {0.2, 0.6}) {
      const auto lhs = t->interpolate(0, 1, 4, c1).scale + t->interpolate(0, 1, 4, c2).scale;
      const auto rhs = t->interpolate(0, 1, 4, c1 + c2).scale + at0.scale;
      CHECK(torch::allclose(lhs, rhs, 0, 1e-5));
    }
  }
  CHECK_THROWS_AS(t->interpolate(0, 1, 4, 1.5), ContractError);
  CHECK_THROWS_AS(t->interpolate(0, 1, 4, -0.1), ContractError);

  // Results never alias table storage.
  auto fresh = t->interpolate(0, 1, 4, 0.0);
  fresh.scale.add_(100.0);
  CHECK(torch::equal(t->entry(0, 1).scale, src.scale));
}

TEST_CASE("initialization starts near the identity injection") {
  torch::manual_seed(8);
  EmbeddingTable t(AttributeSchema::shapeset(), 64);
  CHECK(std::abs(t->scale().mean().item<double>() - 1.0) < 0.01);
  CHECK(std::abs(t->bias().mean().item<double>()) < 0.01);
  CHECK(t->scale().std().item<double>() == doctest::Approx(0.02).epsilon(0.1));
}

TEST_CASE("json serialization is keyed by names") {
  torch::manual_seed(9);
  const auto schema = AttributeSchema::shapeset();
  EmbeddingTable a(schema, 4, 0.3);
  const auto j = a->to_json();
  CHECK(j.contains("color"));
  CHECK(j["color"].contains("magenta"));
  EmbeddingTable b(schema, 4, 0.3);
  b->load_json(j);
  CHECK(torch::equal(a->scale(), b->scale()));
  CHECK(torch::equal(a->bias(), b->bias()));

  // A schema listing the same values in another order loads by name.
  auto reordered = std::make_shared<const AttributeSchema>(std::vector<AttributeSchema::Category>{
      {"shape", {"triangle", "circle", "square"}},
      {"color", {"cyan", "red", "green", "blue", "yellow", "magenta"}},
      {"size", {"small", "medium", "large"}},
      {"pattern", {"striped", "solid"}}});
  EmbeddingTable c(reordered, 4);
  c->load_json(j);
  CHECK(torch::equal(c->entry(1, 0).scale, a->entry(0, 5).scale));
  CHECK(torch::equal(c->entry(0, 1).bias, a->entry(1, 0).bias));

  auto broken = j;
  broken["color"].erase("red");
  CHECK_THROWS_AS(b->load_json(broken), ConfigError);
}
