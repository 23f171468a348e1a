#include "testing.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "airr/errors.hpp"
#include "airr/evaluator.hpp"
#include "fixtures.hpp"

using namespace airr;
using namespace airr::eval;
using airr::testing::scratch;
using airr::testing::small_dataset;
using airr::testing::tiny_arch;
namespace fs = std::filesystem;

namespace {

// Brute force over every pair, full stable sort by (distance, index).
std::vector<std::vector<std::size_t>> brute_force_knn(const torch::Tensor& q, const torch::Tensor& g, std::size_t k) {
  const auto qa = q.to(torch::kFloat64);
  const auto ga = g.to(torch::kFloat64);
  std::vector<std::vector<std::size_t>> out;
  for (int64_t i = 0; i < qa.size(0); ++i) {
    std::vector<std::pair<double, std::size_t>> all;
    for (int64_t j = 0; j < ga.size(0); ++j) {
      double d = 0;
      for (int64_t f = 0; f < qa.size(1); ++f) {
        const double diff = qa[i][f].item<double>() - ga[j][f].item<double>();
        d += diff * diff;
      }
      all.emplace_back(d, static_cast<std::size_t>(j));
    }
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> row;
    for (std::size_t t = 0; t < k; ++t) row.push_back(all[t].second);
    out.push_back(row);
  }
  return out;
}

std::vector<std::vector<int>> tuples_of(const data::Dataset& ds, std::span<const std::size_t> idx) {
  std::vector<std::vector<int>> out;
  for (auto i : idx) {
    const auto v = ds.attributes(i).values();
    out.emplace_back(v.begin(), v.end());
  }
  return out;
}

std::vector<std::size_t> iota(std::size_t from, std::size_t count) {
  std::vector<std::size_t> v(count);
  std::iota(v.begin(), v.end(), from);
  return v;
}

// A judge good enough that identity/oracle baselines are meaningful, trained
// once per process.
struct TrainedFixture {
  std::shared_ptr<const data::Dataset> ds;
  data::DatasetSplit split;
  TrainedJudge judge;
};

const TrainedFixture& trained() {
  static TrainedFixture f = [] {
    TrainedFixture t;
    t.ds = small_dataset(1500);
    JudgeTrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 32;
    cfg.test_count = 300;
    cfg.required_accuracy = 0.0;
    cfg.arch.judge_channels = 16;
    cfg.arch.judge_features = 64;
    t.judge = train_judge(*t.ds, cfg);
    t.split = data::DatasetSplit::make(t.ds->size(), cfg.test_count, cfg.split_seed);
    return t;
  }();
  return f;
}

}  // namespace

TEST_CASE("nearest neighbors match the all-pairs oracle on a 50-image gallery") {
  const auto ds = small_dataset();
  const auto judge = airr::testing::frozen_judge(tiny_arch(), ds->schema());
  const auto gal_idx = iota(0, 50);
  const auto query_idx = iota(50, 40);
  auto j = judge;
  const auto gallery = build_gallery(j, *ds, gal_idx);
  REQUIRE(gallery.features.size(0) == 50);
  torch::Tensor qf;
  {
    torch::NoGradGuard guard;
    qf = j->features(ds->batch(query_idx).images);
  }
  const auto qt = tuples_of(*ds, query_idx);
  for (std::size_t k : {1u, 5u, 20u}) {
    CAPTURE(k);
    const auto expected = brute_force_knn(qf, gallery.features, k);
    CHECK(nearest_neighbors(qf, gallery.features, k) == expected);
    const auto hits = retrieval_hits(qf, qt, gallery.features, gallery.tuples, k);
    for (std::size_t i = 0; i < qt.size(); ++i) {
      bool hit = false;
      for (auto n : expected[i]) hit |= gallery.tuples[n] == qt[i];
      CHECK(hits[i] == hit);
    }
  }
}

TEST_CASE("retrieval ties resolve to the lower gallery index") {
  const auto g = torch::tensor({1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0}).reshape({4, 2});
  const auto q = torch::tensor({1.0, 0.0}).reshape({1, 2});
  const auto nn = nearest_neighbors(q, g, 3);
  CHECK(nn[0] == std::vector<std::size_t>{0, 1, 3});
}

TEST_CASE("self-retrieval and exhaustive k always hit") {
  const auto ds = small_dataset();
  const auto idx = iota(0, 30);
  const auto tuples = tuples_of(*ds, idx);
  const auto feats = torch::randn({30, 8}, torch::kFloat64);
  for (bool h : retrieval_hits(feats, tuples, feats, tuples, 1)) CHECK(h);
  const auto other = torch::randn({30, 8}, torch::kFloat64);
  for (bool h : retrieval_hits(other, tuples, feats, tuples, 30)) CHECK(h);
}

TEST_CASE("retrieval rejects bad k and mismatched inputs") {
  const auto g = torch::randn({5, 3});
  const auto q = torch::randn({2, 3});
  const std::vector<std::vector<int>> gt(5, {0}), qt(2, {0});
  CHECK_THROWS_AS(nearest_neighbors(q, g, 0), ContractError);
  CHECK_THROWS_AS(nearest_neighbors(q, g, 6), ContractError);
  CHECK_THROWS_AS(nearest_neighbors(torch::randn({2, 4}), g, 1), ContractError);
  CHECK_THROWS_AS(retrieval_hits(q, qt, g, gt, 6), ContractError);
  CHECK_THROWS_AS(retrieval_hits(q, std::vector<std::vector<int>>(3, {0}), g, gt, 1), ContractError);

  const auto ds = small_dataset();
  auto judge = airr::testing::frozen_judge(tiny_arch(), ds->schema());
  const auto gal = build_gallery(judge, *ds, iota(0, 10));
  IdentityEditor id;
  const auto test = iota(10, 5);
  CHECK_THROWS_AS(topk_retrieval(id, judge, *ds, test, gal, 11, 1), ContractError);
  CHECK_THROWS_AS(topk_retrieval(id, judge, *ds, test, gal, 0, 1), ContractError);
}

TEST_CASE("single-category targets differ in exactly the requested category") {
  const auto ds = small_dataset();
  const auto idx = iota(0, 200);
  const auto labels = ds->batch(idx).labels;
  data::Rng rng(3);
  for (std::size_t cat = 0; cat < ds->schema()->num_categories(); ++cat) {
    const auto t = single_category_targets(labels, cat, ds->schema(), rng);
    const auto diff = t.ne(labels);
    CHECK(diff.select(1, static_cast<int64_t>(cat)).all().item<bool>());
    CHECK(diff.sum().item<int64_t>() == labels.size(0));
    CHECK(t.select(1, static_cast<int64_t>(cat)).max().item<int64_t>() < ds->schema()->cardinality(cat));
  }
  // every other color value gets drawn
  const auto t = single_category_targets(labels, 0, ds->schema(), rng);
  CHECK(std::get<0>(torch::_unique(t.select(1, 0))).numel() == 6);
}

TEST_CASE("identity editor scores near zero and the oracle editor near the judge") {
  const auto& f = trained();
  auto judge = f.judge.judge;
  const auto judge_hash = parameter_hash(*judge);
  const auto color_acc = f.judge.test_accuracy[0];
  MESSAGE("fixture judge accuracy " << nlohmann::json(f.judge.test_accuracy).dump());
  REQUIRE(color_acc > 0.95);

  IdentityEditor id;
  const auto ident = manipulation_accuracy(id, judge, *f.ds, f.split.test, 0, 9);
  CHECK(ident.count == f.split.test.size());
  // same images the judge was scored on: only its own mistakes can count
  CHECK(ident.rate <= 1.0 - color_acc + 1e-12);

  OracleEditor oracle(f.ds, data::ReferenceIndex(*f.ds, f.split.train), 4);
  const auto orc = manipulation_accuracy(oracle, judge, *f.ds, f.split.test, 0, 9);
  const auto train_acc = judge_accuracy(judge, *f.ds, f.split.train)[0];
  CHECK(orc.rate >= train_acc - 0.03);

  CHECK(parameter_hash(*judge) == judge_hash);
}

TEST_CASE("preservation curve: validation, omitted points and the identity baseline") {
  const auto& f = trained();
  auto judge = f.judge.judge;
  IdentityEditor id;
  const auto test = std::span<const std::size_t>(f.split.test).first(100);
  CHECK_THROWS_AS(preservation_curve(id, judge, *f.ds, test, 0, {}, 1), ContractError);
  CHECK_THROWS_AS(preservation_curve(id, judge, *f.ds, test, 0, {0.0}, 1), ContractError);
  CHECK_THROWS_AS(preservation_curve(id, judge, *f.ds, test, 0, {1.5}, 1), ContractError);

  const auto curve = preservation_curve(id, judge, *f.ds, test, 0, {0.001, 0.25, 0.5, 1.0}, 1);
  REQUIRE(curve.size() == 3);
  CHECK(curve[0].rho == 0.25);
  CHECK(curve[0].count == 25);
  CHECK(curve[2].count == 100);
  // Bounds from the judge's error counts on the full test split, which
  // contains these 100 items.
  const double n_test = static_cast<double>(f.split.test.size());
  const auto& acc = f.judge.test_accuracy;
  const double color_errors = (1.0 - acc[0]) * n_test;
  const double other_errors = ((1.0 - acc[1]) + (1.0 - acc[2]) + (1.0 - acc[3])) * n_test;
  for (const auto& p : curve) {
    const double m = static_cast<double>(p.count);
    CHECK(p.changing <= color_errors / m + 1e-9);
    CHECK(p.preservation >= 1.0 - other_errors / (3.0 * m) - 1e-9);
  }
}

TEST_CASE("information-hiding diagnostic reports chance levels") {
  const auto ds = small_dataset();
  auto judge = airr::testing::frozen_judge(tiny_arch(), ds->schema());
  torch::manual_seed(0);
  AirrModel model(tiny_arch(), ds->schema());
  model->eval();
  const auto r = information_hiding_diagnostic(model, judge, *ds, iota(0, 20));
  REQUIRE(r.chance.size() == 4);
  CHECK(r.chance[0] == doctest::Approx(1.0 / 6).epsilon(1e-15));
  CHECK(r.chance[1] == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(r.chance[2] == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(r.chance[3] == doctest::Approx(1.0 / 2).epsilon(1e-15));
  for (double a : r.accuracy) CHECK((a >= 0.0 && a <= 1.0));
  CHECK(r.mean_accuracy() == doctest::Approx(std::accumulate(r.accuracy.begin(), r.accuracy.end(), 0.0) / 4));
}

TEST_CASE("multi-attribute edits run one generator pass per request") {
  const auto ds = small_dataset();
  auto judge = airr::testing::frozen_judge(tiny_arch(), ds->schema());
  torch::manual_seed(0);
  AirrModel model(tiny_arch(), ds->schema());
  model->eval();
  const auto r = multi_attribute_accuracy(model, judge, *ds, iota(0, 12), 0, 1, 3);
  CHECK(r.count == 12);
  CHECK(r.requests == 12);
  CHECK(r.decode_calls == r.requests);
}

TEST_CASE("strength sweep shapes and the single-strength degenerate case") {
  const auto ds = small_dataset();
  auto judge = airr::testing::frozen_judge(tiny_arch(), ds->schema());
  torch::manual_seed(0);
  AirrModel model(tiny_arch(), ds->schema());
  model->eval();
  const std::vector<double> s = {0, 0.25, 0.5, 0.75, 1};
  const auto r = strength_monotonicity(model, judge, *ds, iota(0, 8), 0, s, 2);
  CHECK(r.count == 8);
  REQUIRE(r.confidence.size() == 8);
  for (const auto& row : r.confidence) CHECK(row.size() == 5);
  CHECK(strength_monotonicity(model, judge, *ds, iota(0, 8), 0, {0.5}, 2).monotone_fraction == 1.0);
  CHECK_THROWS_AS(strength_monotonicity(model, judge, *ds, iota(0, 8), 0, {}, 2), ContractError);
}

TEST_CASE("judge training is deterministic and gated on accuracy") {
  const auto ds = small_dataset();
  JudgeTrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.test_count = 40;
  cfg.arch = tiny_arch();
  cfg.required_accuracy = 0.0;
  const auto a = train_judge(*ds, cfg);
  const auto b = train_judge(*ds, cfg);
  CHECK(a.manifest == b.manifest);
  CHECK(a.judge->is_frozen());

  // judging twice gives identical predictions
  auto j = a.judge;
  const auto images = ds->batch(iota(0, 16)).images;
  const auto p1 = judge_probabilities(j, images);
  const auto p2 = judge_probabilities(j, images);
  for (std::size_t c = 0; c < p1.size(); ++c) CHECK(torch::equal(p1[c], p2[c]));

  cfg.required_accuracy = 1.01;
  TrainedJudge failed;
  CHECK_THROWS_AS(train_judge(*ds, cfg, &failed), JudgeUnqualifiedError);
  CHECK(failed.judge);
  CHECK(failed.manifest.at("test_accuracy").size() == 4);
}

TEST_CASE("saved judges reload bit-exactly and are re-gated") {
  const auto ds = small_dataset();
  JudgeTrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.test_count = 40;
  cfg.arch = tiny_arch();
  cfg.required_accuracy = 0.0;
  const auto trained_judge = train_judge(*ds, cfg);
  const auto dir = scratch("judge_io");
  save_judge(trained_judge, dir);
  const auto loaded = load_judge(dir, 0.0);
  CHECK(parameter_hash(*loaded.judge) == parameter_hash(*trained_judge.judge));
  CHECK(loaded.test_accuracy == trained_judge.test_accuracy);
  CHECK(loaded.judge->is_frozen());
  CHECK_THROWS_AS(load_judge(dir, 1.01), JudgeUnqualifiedError);

  auto manifest = trained_judge.manifest;
  manifest["parameter_hash"] = std::string(64, 'f');
  std::ofstream(dir / "judge.json") << manifest.dump();
  CHECK_THROWS_AS(load_judge(dir, 0.0), IoError);
  CHECK_THROWS_AS(load_judge(scratch("judge_missing"), 0.0), IoError);
}
