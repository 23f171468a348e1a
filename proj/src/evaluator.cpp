#include "airr/evaluator.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "airr/errors.hpp"

namespace airr::eval {

namespace fs = std::filesystem;

namespace {

template <typename F>
void for_batches(std::span<const std::size_t> indices, int batch_size, F&& f) {
  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(batch_size), indices.size() - start);
    f(start, indices.subspan(start, n));
  }
}

std::vector<int> row_of(const torch::Tensor& labels, int64_t i) {
  std::vector<int> out;
  for (int64_t j = 0; j < labels.size(1); ++j) out.push_back(static_cast<int>(labels[i][j].item<int64_t>()));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Judge

std::vector<torch::Tensor> judge_probabilities(Judge& judge, const torch::Tensor& images) {
  torch::NoGradGuard guard;
  judge->eval();
  std::vector<torch::Tensor> out;
  for (const auto& l : judge->forward(images).per_category) out.push_back(torch::softmax(l, 1));
  return out;
}

std::vector<double> judge_accuracy(Judge& judge, const data::Dataset& dataset, std::span<const std::size_t> indices) {
  const auto n = dataset.schema()->num_categories();
  std::vector<double> correct(n, 0.0);
  for_batches(indices, 200, [&](std::size_t, std::span<const std::size_t> idx) {
    const auto batch = dataset.batch(idx);
    const auto probs = judge_probabilities(judge, batch.images);
    for (std::size_t i = 0; i < n; ++i) {
      correct[i] += probs[i].argmax(1).eq(batch.labels.select(1, static_cast<int64_t>(i))).sum().item<double>();
    }
  });
  for (auto& c : correct) c /= static_cast<double>(std::max<std::size_t>(indices.size(), 1));
  return correct;
}

TrainedJudge train_judge(const data::Dataset& dataset, const JudgeTrainConfig& config, TrainedJudge* unqualified) {
  if (config.epochs < 1 || config.batch_size < 2 || !(config.lr > 0)) throw ConfigError("judge: invalid training config");
  const auto split = data::DatasetSplit::make(dataset.size(), config.test_count, config.split_seed);
  torch::manual_seed(config.seed);
  TrainedJudge out;
  out.judge = Judge(config.arch, dataset.schema());
  torch::optim::Adam opt(out.judge->parameters(), torch::optim::AdamOptions(config.lr));
  data::Rng rng(config.seed);
  auto order = split.train;
  const auto per_epoch = static_cast<double>((order.size() + config.batch_size - 1) / config.batch_size);
  const double total_steps = per_epoch * config.epochs;
  double step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    out.judge->train();
    for_batches(order, config.batch_size, [&](std::size_t, std::span<const std::size_t> idx) {
      if (idx.size() < 2) return;  // batch norm needs two samples
      const auto batch = dataset.batch(idx);
      // cosine decay to zero over the run
      static_cast<torch::optim::AdamOptions&>(opt.param_groups()[0].options())
          .lr(config.lr * 0.5 * (1.0 + std::cos(M_PI * step / total_steps)));
      step += 1;
      opt.zero_grad();
      const auto loss = losses::mle_loss(out.judge->forward(batch.images), batch.labels);
      loss.backward();
      opt.step();
    });
  }
  out.judge->freeze();
  out.test_accuracy = judge_accuracy(out.judge, dataset, split.test);
  nlohmann::json acc = nlohmann::json::object();
  for (std::size_t i = 0; i < out.test_accuracy.size(); ++i) {
    acc[dataset.schema()->category(i).name] = out.test_accuracy[i];
  }
  out.manifest = {{"schema_hash", dataset.schema()->hash()},
                  {"schema", dataset.schema()->to_json()},
                  {"arch", config.arch.to_json()},
                  {"seed", config.seed},
                  {"epochs", config.epochs},
                  {"batch_size", config.batch_size},
                  {"lr", config.lr},
                  {"test_count", config.test_count},
                  {"split_seed", config.split_seed},
                  {"test_accuracy", acc},
                  {"parameter_hash", parameter_hash(*out.judge)}};
  const auto worst = *std::min_element(out.test_accuracy.begin(), out.test_accuracy.end());
  if (worst < config.required_accuracy) {
    if (unqualified) *unqualified = out;
    throw JudgeUnqualifiedError("judge reached only " + std::to_string(worst) + " accuracy on some category (" +
                                acc.dump() + "); required " + std::to_string(config.required_accuracy));
  }
  return out;
}

void save_judge(const TrainedJudge& judge, const fs::path& dir) {
  fs::create_directories(dir);
  save_module(*judge.judge, dir / "judge.pt");
  std::ofstream out(dir / "judge.json");
  if (!out) throw IoError("cannot write " + (dir / "judge.json").string());
  out << judge.manifest.dump(2) << '\n';
}

TrainedJudge load_judge(const fs::path& dir, double required_accuracy) {
  std::ifstream in(dir / "judge.json");
  if (!in) throw IoError("judge: cannot read " + (dir / "judge.json").string());
  TrainedJudge out;
  SchemaPtr schema;
  try {
    out.manifest = nlohmann::json::parse(in);
    schema = AttributeSchema::from_json(out.manifest.at("schema"));
    out.judge = Judge(ArchConfig::from_json(out.manifest.at("arch")), schema);
    for (std::size_t i = 0; i < schema->num_categories(); ++i) {
      out.test_accuracy.push_back(out.manifest.at("test_accuracy").at(schema->category(i).name).get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("judge: malformed judge.json: " + std::string(e.what()));
  }
  load_module(*out.judge, dir / "judge.pt");
  out.judge->freeze();
  if (parameter_hash(*out.judge) != out.manifest.value("parameter_hash", "")) {
    throw IoError("judge: weights do not match the recorded parameter hash");
  }
  const auto worst = *std::min_element(out.test_accuracy.begin(), out.test_accuracy.end());
  if (worst < required_accuracy) {
    throw JudgeUnqualifiedError("judge accuracy " + std::to_string(worst) + " is below the required " +
                                std::to_string(required_accuracy));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Editors

torch::Tensor AirrEditor::edit(const data::Batch& source, const torch::Tensor& targets) {
  const auto strengths = torch::ones(targets.sizes(), torch::kFloat32);
  return model_->edit(source.images, source.masks, targets, strengths, source.labels).images;
}

torch::Tensor OracleEditor::edit(const data::Batch& source, const torch::Tensor& targets) {
  std::vector<std::size_t> refs;
  for (int64_t i = 0; i < targets.size(0); ++i) {
    const AttributeAssignment t(dataset_->schema(), row_of(targets, i));
    refs.push_back(data::lookup_reference(t, index_, rng_));
  }
  (void)source;
  return dataset_->batch(refs).images;
}

// ---------------------------------------------------------------------------
// Metrics

torch::Tensor single_category_targets(const torch::Tensor& sources, std::size_t category, const SchemaPtr& schema,
                                      data::Rng& rng) {
  const int card = schema->cardinality(category);
  auto targets = sources.clone();
  auto col = targets.select(1, static_cast<int64_t>(category));
  std::uniform_int_distribution<int> shift(1, card - 1);
  for (int64_t i = 0; i < targets.size(0); ++i) {
    const auto src = col[i].item<int64_t>();
    col[i] = (src + shift(rng)) % card;
  }
  return targets;
}

AccuracyResult manipulation_accuracy(Editor& editor, Judge& judge, const data::Dataset& dataset,
                                     std::span<const std::size_t> test, std::size_t category, std::uint64_t seed,
                                     int batch_size) {
  if (!judge->is_frozen()) throw EvaluationError("judge must be frozen");
  data::Rng rng(seed);
  AccuracyResult r;
  double hits = 0;
  for_batches(test, batch_size, [&](std::size_t, std::span<const std::size_t> idx) {
    const auto batch = dataset.batch(idx);
    const auto targets = single_category_targets(batch.labels, category, dataset.schema(), rng);
    const auto edited = editor.edit(batch, targets);
    const auto probs = judge_probabilities(judge, edited);
    hits += probs[category].argmax(1).eq(targets.select(1, static_cast<int64_t>(category))).sum().item<double>();
    r.count += idx.size();
  });
  r.rate = r.count ? hits / static_cast<double>(r.count) : 0.0;
  return r;
}

std::vector<std::vector<std::size_t>> nearest_neighbors(const torch::Tensor& queries, const torch::Tensor& gallery,
                                                        std::size_t k) {
  const auto q = queries.to(torch::kFloat64).contiguous();
  const auto g = gallery.to(torch::kFloat64).contiguous();
  const auto nq = static_cast<std::size_t>(q.size(0));
  const auto ng = static_cast<std::size_t>(g.size(0));
  const auto dim = static_cast<std::size_t>(q.size(1));
  if (k == 0 || k > ng) throw ContractError("retrieval: k must lie in [1, gallery size]");
  if (g.size(1) != q.size(1)) throw ContractError("retrieval: feature dimensions differ");
  const double* qp = q.data_ptr<double>();
  const double* gp = g.data_ptr<double>();
  std::vector<std::vector<std::size_t>> out(nq);
  std::vector<std::pair<double, std::size_t>> dist(ng);
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t j = 0; j < ng; ++j) {
      double d = 0;
      for (std::size_t f = 0; f < dim; ++f) {
        const double diff = qp[i * dim + f] - gp[j * dim + f];
        d += diff * diff;
      }
      dist[j] = {d, j};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    for (std::size_t t = 0; t < k; ++t) out[i].push_back(dist[t].second);
  }
  return out;
}

std::vector<bool> retrieval_hits(const torch::Tensor& query_features, const std::vector<std::vector<int>>& targets,
                                 const torch::Tensor& gallery_features,
                                 const std::vector<std::vector<int>>& gallery_tuples, std::size_t k) {
  if (static_cast<std::size_t>(query_features.size(0)) != targets.size() ||
      static_cast<std::size_t>(gallery_features.size(0)) != gallery_tuples.size()) {
    throw ContractError("retrieval: features and tuples disagree in count");
  }
  const auto nn = nearest_neighbors(query_features, gallery_features, k);
  std::vector<bool> hits(nn.size(), false);
  for (std::size_t i = 0; i < nn.size(); ++i) {
    for (auto j : nn[i]) {
      if (gallery_tuples[j] == targets[i]) {
        hits[i] = true;
        break;
      }
    }
  }
  return hits;
}

Gallery build_gallery(Judge& judge, const data::Dataset& dataset, std::span<const std::size_t> indices) {
  Gallery g;
  g.indices.assign(indices.begin(), indices.end());
  std::vector<torch::Tensor> feats;
  torch::NoGradGuard guard;
  judge->eval();
  for_batches(indices, 200, [&](std::size_t, std::span<const std::size_t> idx) {
    feats.push_back(judge->features(dataset.batch(idx).images).to(torch::kFloat64));
  });
  for (auto i : indices) {
    const auto v = dataset.attributes(i).values();
    g.tuples.emplace_back(v.begin(), v.end());
  }
  g.features = feats.empty() ? torch::zeros({0, 0}, torch::kFloat64) : torch::cat(feats);
  return g;
}

RetrievalResult topk_retrieval(Editor& editor, Judge& judge, const data::Dataset& dataset,
                               std::span<const std::size_t> test, const Gallery& gallery, std::size_t k,
                               std::uint64_t seed, int batch_size) {
  if (k == 0 || k > gallery.tuples.size()) throw ContractError("retrieval: k must lie in [1, gallery size]");
  RetrievalResult r;
  r.k = k;
  data::Rng rng(seed);
  const auto n = dataset.schema()->num_categories();
  for (std::size_t cat = 0; cat < n; ++cat) {
    double hits = 0;
    std::size_t count = 0;
    for_batches(test, batch_size, [&](std::size_t, std::span<const std::size_t> idx) {
      const auto batch = dataset.batch(idx);
      const auto targets = single_category_targets(batch.labels, cat, dataset.schema(), rng);
      torch::Tensor feats;
      {
        torch::NoGradGuard guard;
        feats = judge->features(editor.edit(batch, targets));
      }
      std::vector<std::vector<int>> tuples;
      for (int64_t i = 0; i < targets.size(0); ++i) tuples.push_back(row_of(targets, i));
      const auto h = retrieval_hits(feats, tuples, gallery.features, gallery.tuples, k);
      hits += static_cast<double>(std::count(h.begin(), h.end(), true));
      count += h.size();
    });
    r.per_category.push_back(count ? hits / static_cast<double>(count) : 0.0);
  }
  r.rate = std::accumulate(r.per_category.begin(), r.per_category.end(), 0.0) / static_cast<double>(n);
  return r;
}

std::vector<CurvePoint> preservation_curve(Editor& editor, Judge& judge, const data::Dataset& dataset,
                                           std::span<const std::size_t> test, std::size_t category,
                                           const std::vector<double>& grid, std::uint64_t seed, int batch_size) {
  if (grid.empty()) throw ContractError("preservation_curve: empty grid");
  for (double rho : grid) {
    if (!(rho > 0.0 && rho <= 1.0)) throw ContractError("preservation_curve: fractions must lie in (0, 1]");
  }
  const auto n = dataset.schema()->num_categories();
  struct Item {
    double confidence;
    bool changed;
    double preserved;
    std::size_t order;
  };
  std::vector<Item> items;
  data::Rng rng(seed);
  for_batches(test, batch_size, [&](std::size_t, std::span<const std::size_t> idx) {
    const auto batch = dataset.batch(idx);
    const auto targets = single_category_targets(batch.labels, category, dataset.schema(), rng);
    const auto probs = judge_probabilities(judge, editor.edit(batch, targets));
    const auto target_col = targets.select(1, static_cast<int64_t>(category));
    const auto conf = probs[category].gather(1, target_col.unsqueeze(1)).squeeze(1);
    const auto changed = probs[category].argmax(1).eq(target_col);
    for (int64_t b = 0; b < targets.size(0); ++b) {
      double kept = 0;
      for (std::size_t c = 0; c < n; ++c) {
        if (c == category) continue;
        kept += probs[c][b].argmax().item<int64_t>() == batch.labels[b][static_cast<int64_t>(c)].item<int64_t>();
      }
      items.push_back({conf[b].item<double>(), changed[b].item<bool>(), n > 1 ? kept / double(n - 1) : 1.0,
                       items.size()});
    }
  });
  std::stable_sort(items.begin(), items.end(),
                   [](const Item& a, const Item& b) { return a.confidence > b.confidence; });
  std::vector<CurvePoint> curve;
  for (double rho : grid) {
    const auto m = static_cast<std::size_t>(std::floor(rho * static_cast<double>(items.size()) + 1e-9));
    if (m == 0) continue;
    CurvePoint p{rho, m, 0, 0};
    for (std::size_t i = 0; i < m; ++i) {
      p.changing += items[i].changed;
      p.preservation += items[i].preserved;
    }
    p.changing /= static_cast<double>(m);
    p.preservation /= static_cast<double>(m);
    curve.push_back(p);
  }
  return curve;
}

double DiagnosticResult::mean_accuracy() const {
  return accuracy.empty() ? 0.0 : std::accumulate(accuracy.begin(), accuracy.end(), 0.0) / double(accuracy.size());
}

DiagnosticResult information_hiding_diagnostic(AirrModel& model, Judge& judge, const data::Dataset& dataset,
                                               std::span<const std::size_t> test, int batch_size) {
  const auto& schema = dataset.schema();
  const auto n = schema->num_categories();
  DiagnosticResult r;
  r.accuracy.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) r.chance.push_back(1.0 / schema->cardinality(i));
  for_batches(test, batch_size, [&](std::size_t, std::span<const std::size_t> idx) {
    const auto batch = dataset.batch(idx);
    const auto probs = judge_probabilities(judge, model->diagnose(batch.images, batch.masks));
    for (std::size_t i = 0; i < n; ++i) {
      r.accuracy[i] += probs[i].argmax(1).eq(batch.labels.select(1, static_cast<int64_t>(i))).sum().item<double>();
    }
  });
  for (auto& a : r.accuracy) a /= static_cast<double>(std::max<std::size_t>(test.size(), 1));
  return r;
}

MultiEditResult multi_attribute_accuracy(AirrModel& model, Judge& judge, const data::Dataset& dataset,
                                         std::span<const std::size_t> test, std::size_t category_a,
                                         std::size_t category_b, std::uint64_t seed) {
  data::Rng rng(seed);
  MultiEditResult r;
  double both = 0;
  const auto n = static_cast<int64_t>(dataset.schema()->num_categories());
  for (auto i : test) {
    const std::array<std::size_t, 1> one{i};
    const auto batch = dataset.batch(one);
    auto targets = single_category_targets(batch.labels, category_a, dataset.schema(), rng);
    targets = single_category_targets(targets, category_b, dataset.schema(), rng);
    auto strengths = torch::zeros({1, n});
    strengths[0][static_cast<int64_t>(category_a)] = 1.0;
    strengths[0][static_cast<int64_t>(category_b)] = 1.0;
    const auto before = model->decode_calls();
    const auto out = model->edit(batch.images, batch.masks, targets, strengths);
    r.decode_calls += model->decode_calls() - before;
    ++r.requests;
    const auto probs = judge_probabilities(judge, out.images);
    const bool ok_a = probs[category_a].argmax(1)[0].item<int64_t>() == targets[0][int64_t(category_a)].item<int64_t>();
    const bool ok_b = probs[category_b].argmax(1)[0].item<int64_t>() == targets[0][int64_t(category_b)].item<int64_t>();
    both += ok_a && ok_b;
    ++r.count;
  }
  r.both_correct = r.count ? both / static_cast<double>(r.count) : 0.0;
  return r;
}

StrengthResult strength_monotonicity(AirrModel& model, Judge& judge, const data::Dataset& dataset,
                                     std::span<const std::size_t> test, std::size_t category,
                                     const std::vector<double>& strengths, std::uint64_t seed) {
  if (strengths.empty()) throw ContractError("strength sweep: empty grid");
  data::Rng rng(seed);
  StrengthResult r;
  const auto n = static_cast<int64_t>(dataset.schema()->num_categories());
  const auto s = static_cast<int64_t>(strengths.size());
  double monotone = 0;
  for (auto i : test) {
    const std::array<std::size_t, 1> one{i};
    const auto batch = dataset.batch(one);
    const auto targets = single_category_targets(batch.labels, category, dataset.schema(), rng);
    // All strengths of one image go through one batched pass.
    auto str = torch::zeros({s, n});
    for (int64_t k = 0; k < s; ++k) str[k][static_cast<int64_t>(category)] = strengths[static_cast<std::size_t>(k)];
    const auto out = model->edit(batch.images.expand({s, -1, -1, -1}), batch.masks.expand({s, -1, -1, -1}),
                                 targets.expand({s, -1}), str, batch.labels.expand({s, -1}));
    const auto target = targets[0][static_cast<int64_t>(category)].item<int64_t>();
    const auto probs = judge_probabilities(judge, out.images)[category].select(1, target).to(torch::kFloat64).contiguous();
    std::vector<double> conf(probs.data_ptr<double>(), probs.data_ptr<double>() + s);
    bool ok = true;
    // 1e-6 absorbs single-precision noise once the confidence saturates.
    for (std::size_t k = 1; k < conf.size(); ++k) ok = ok && conf[k] >= conf[k - 1] - 1e-6;
    monotone += ok;
    r.confidence.push_back(std::move(conf));
    ++r.count;
  }
  r.monotone_fraction = r.count ? monotone / static_cast<double>(r.count) : 0.0;
  return r;
}

}  // namespace airr::eval
