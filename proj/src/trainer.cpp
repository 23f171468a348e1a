#include "airr/trainer.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "airr/errors.hpp"
#include "airr/image_io.hpp"
#include "airr/jsonl_sink.hpp"

namespace airr {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// TrainConfig

namespace {

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || !std::isfinite(out)) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

int parse_small_int(const std::string& key, const std::string& v) {
  const auto x = parse_int(key, v);
  if (x < 0 || x > 1'000'000) throw ConfigError("config: '" + key + "' out of range");
  return static_cast<int>(x);
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "dataset") dataset = value;
  else if (key == "out_dir") out_dir = value;
  else if (key == "judge") judge = value;
  else if (key == "lambda1") lambdas.disentangle = parse_double(key, value);
  else if (key == "lambda2") lambdas.attribute = parse_double(key, value);
  else if (key == "lambda3") lambdas.reconstruct = parse_double(key, value);
  else if (key == "lambda4") lambdas.perceptual = parse_double(key, value);
  else if (key == "margin") margin = parse_double(key, value);
  else if (key == "lr") lr = parse_double(key, value);
  else if (key == "beta1") beta1 = parse_double(key, value);
  else if (key == "beta2") beta2 = parse_double(key, value);
  else if (key == "batch_size") batch_size = parse_small_int(key, value);
  else if (key == "steps") steps = parse_int(key, value);
  else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "test_count") test_count = static_cast<std::size_t>(parse_int(key, value));
  else if (key == "split_seed") split_seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "checkpoint_every") checkpoint_every = parse_int(key, value);
  else if (key == "log_every") log_every = parse_int(key, value);
  else if (key == "grid_every") grid_every = parse_int(key, value);
  else if (key == "arch.base_channels") arch.base_channels = parse_small_int(key, value);
  else if (key == "arch.fg_channels") arch.fg_channels = parse_small_int(key, value);
  else if (key == "arch.bg_channels") arch.bg_channels = parse_small_int(key, value);
  else if (key == "arch.res_blocks") arch.res_blocks = parse_small_int(key, value);
  else if (key == "arch.remover_layers") arch.remover_layers = parse_small_int(key, value);
  else if (key == "arch.disc_channels") arch.disc_channels = parse_small_int(key, value);
  else if (key == "arch.judge_channels") arch.judge_channels = parse_small_int(key, value);
  else if (key == "arch.judge_features") arch.judge_features = parse_small_int(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

TrainConfig TrainConfig::parse(std::string_view text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  TrainConfig c;
  if (root.IsNull()) return c;
  if (!root.IsMap()) throw ConfigError("config: expected flat 'key: value' lines");
  for (const auto& kv : root) {
    const auto key = kv.first.as<std::string>();
    if (kv.second.IsNull()) {
      c.set(key, "");
      continue;
    }
    if (!kv.second.IsScalar()) throw ConfigError("config: '" + key + "' must be a scalar value");
    c.set(key, kv.second.as<std::string>());
  }
  return c;
}

TrainConfig TrainConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void TrainConfig::validate() const {
  const auto& l = lambdas;
  if (l.disentangle < 0 || l.attribute < 0 || l.reconstruct < 0 || l.perceptual < 0) {
    throw ConfigError("config: lambdas must be nonnegative");
  }
  if (!(margin > 0)) throw ConfigError("config: margin must be positive");
  if (!(lr > 0)) throw ConfigError("config: lr must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("config: betas must lie in [0, 1)");
  if (batch_size < 2) throw ConfigError("config: batch_size must be at least 2");
  if (steps < 0) throw ConfigError("config: steps must be nonnegative");
  if (checkpoint_every < 0 || log_every < 1 || grid_every < 0) {
    throw ConfigError("config: checkpoint_every/grid_every must be >= 0 and log_every >= 1");
  }
  if (arch.image_size % 4 != 0 || arch.base_channels < 1 || arch.fg_channels < 1 || arch.bg_channels < 1 ||
      arch.remover_layers < 1 || arch.disc_channels < 1 || arch.judge_channels < 1 || arch.judge_features < 1) {
    throw ConfigError("config: invalid architecture");
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"dataset", dataset.string()},
          {"out_dir", out_dir.string()},
          {"judge", judge.string()},
          {"lambda1", lambdas.disentangle},
          {"lambda2", lambdas.attribute},
          {"lambda3", lambdas.reconstruct},
          {"lambda4", lambdas.perceptual},
          {"margin", margin},
          {"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"batch_size", batch_size},
          {"steps", steps},
          {"seed", seed},
          {"test_count", test_count},
          {"split_seed", split_seed},
          {"checkpoint_every", checkpoint_every},
          {"log_every", log_every},
          {"grid_every", grid_every},
          {"arch", arch.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.dataset = j.at("dataset").get<std::string>();
  c.out_dir = j.at("out_dir").get<std::string>();
  c.judge = j.at("judge").get<std::string>();
  c.lambdas = {j.at("lambda1"), j.at("lambda2"), j.at("lambda3"), j.at("lambda4")};
  c.margin = j.at("margin");
  c.lr = j.at("lr");
  c.beta1 = j.at("beta1");
  c.beta2 = j.at("beta2");
  c.batch_size = j.at("batch_size");
  c.steps = j.at("steps");
  c.seed = j.at("seed");
  c.test_count = j.at("test_count");
  c.split_seed = j.at("split_seed");
  c.checkpoint_every = j.at("checkpoint_every");
  c.log_every = j.at("log_every");
  c.grid_every = j.at("grid_every");
  c.arch = ArchConfig::from_json(j.at("arch"));
  return c;
}

std::string TrainConfig::to_text() const {
  std::ostringstream s;
  // Paths are emitted as double-quoted strings so ':' or '#' survive a reparse.
  const auto quoted = [](const fs::path& p) { return nlohmann::json(p.string()).dump(); };
  s << "dataset: " << quoted(dataset) << '\n'
    << "out_dir: " << quoted(out_dir) << '\n'
    << "judge: " << quoted(judge) << '\n'
    << "lambda1: " << fmt(lambdas.disentangle) << '\n'
    << "lambda2: " << fmt(lambdas.attribute) << '\n'
    << "lambda3: " << fmt(lambdas.reconstruct) << '\n'
    << "lambda4: " << fmt(lambdas.perceptual) << '\n'
    << "margin: " << fmt(margin) << '\n'
    << "lr: " << fmt(lr) << '\n'
    << "beta1: " << fmt(beta1) << '\n'
    << "beta2: " << fmt(beta2) << '\n'
    << "batch_size: " << batch_size << '\n'
    << "steps: " << steps << '\n'
    << "seed: " << seed << '\n'
    << "test_count: " << test_count << '\n'
    << "split_seed: " << split_seed << '\n'
    << "checkpoint_every: " << checkpoint_every << '\n'
    << "log_every: " << log_every << '\n'
    << "grid_every: " << grid_every << '\n'
    << "arch.base_channels: " << arch.base_channels << '\n'
    << "arch.fg_channels: " << arch.fg_channels << '\n'
    << "arch.bg_channels: " << arch.bg_channels << '\n'
    << "arch.res_blocks: " << arch.res_blocks << '\n'
    << "arch.remover_layers: " << arch.remover_layers << '\n'
    << "arch.disc_channels: " << arch.disc_channels << '\n'
    << "arch.judge_channels: " << arch.judge_channels << '\n'
    << "arch.judge_features: " << arch.judge_features << '\n';
  return s.str();
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(TrainConfig config, std::shared_ptr<const data::Dataset> dataset, Judge judge)
    : config_(std::move(config)), dataset_(std::move(dataset)), judge_(std::move(judge)), rng_(config_.seed) {
  config_.validate();
  if (!dataset_) throw ConfigError("trainer: no dataset");
  if (dataset_->height() != config_.arch.image_size || dataset_->width() != config_.arch.image_size) {
    throw ConfigError("trainer: dataset images are " + std::to_string(dataset_->height()) + "x" +
                      std::to_string(dataset_->width()) + ", architecture expects " +
                      std::to_string(config_.arch.image_size));
  }
  if (judge_) {
    if (!judge_->is_frozen()) throw ConfigError("trainer: judge must be frozen");
    if (*judge_->schema() != *dataset_->schema()) throw ConfigError("trainer: judge and dataset schemas differ");
  } else if (config_.lambdas.perceptual != 0.0) {
    throw ConfigError("trainer: a judge is required when lambda4 > 0");
  }
  if (config_.test_count >= dataset_->size()) throw ConfigError("trainer: test_count leaves no training data");
  split_ = data::DatasetSplit::make(dataset_->size(), config_.test_count, config_.split_seed);
  references_ = data::ReferenceIndex(*dataset_, split_.train);

  torch::manual_seed(config_.seed);
  model_ = AirrModel(config_.arch, dataset_->schema());
  disc_ = Discriminator(config_.arch, dataset_->schema());
  init_optimizers();
}

void Trainer::init_optimizers() {
  const auto opts = torch::optim::AdamOptions(config_.lr).betas({config_.beta1, config_.beta2});
  opt_g_ = std::make_unique<torch::optim::Adam>(model_->parameters(), opts);
  opt_d_ = std::make_unique<torch::optim::Adam>(disc_->parameters(), opts);
}

StepBatch Trainer::next_batch() {
  std::uniform_int_distribution<std::size_t> pick(0, split_.train.size() - 1);
  std::vector<std::size_t> idx, refs;
  std::vector<AttributeAssignment> targets;
  for (int b = 0; b < config_.batch_size; ++b) {
    const auto i = split_.train[pick(rng_)];
    idx.push_back(i);
    auto target = data::sample_target(dataset_->attributes(i), rng_, references_);
    refs.push_back(data::lookup_reference(target, references_, rng_));
    targets.push_back(std::move(target));
  }
  auto src = dataset_->batch(idx);
  StepBatch out;
  out.images = src.images;
  out.masks = src.masks;
  out.labels = src.labels;
  out.targets = data::labels_tensor(targets);
  out.references = dataset_->batch(refs).images;
  return out;
}

void Trainer::fail_non_finite(const char* term, const losses::LossReport& partial) {
  nlohmann::json dump = {{"step", step_}, {"term", term}, {"partial_report", partial.to_json()},
                         {"config", config_.to_json()}};
  std::error_code ec;
  fs::create_directories(config_.out_dir, ec);
  const auto path = config_.out_dir / ("nonfinite_step_" + std::to_string(step_) + ".json");
  std::ofstream(path) << dump.dump(2) << '\n';
  throw NonFiniteLossError("non-finite " + std::string(term) + " at step " + std::to_string(step_) +
                           " (dump: " + path.string() + ")");
}

losses::LossReport Trainer::train_step(const StepBatch& batch) {
  using namespace losses;
  model_->train();
  disc_->train();
  const auto& L = config_.lambdas;
  const auto bsz = batch.images.size(0);
  LossReport r;

  auto check = [&](const char* name, const torch::Tensor& t, double& slot) {
    slot = t.item<double>();
    if (!std::isfinite(slot)) fail_non_finite(name, r);
  };

  // Shared encode/remove pass; both decodes reuse it.
  const auto f = model_->encode(batch.images, batch.masks);
  const auto d_mle = mle_loss(model_->classify(f.fg), batch.labels);
  const auto d_mim = mim_loss(model_->classify(f.removed), config_.margin);
  check("L_d_mle", d_mle, r.d_mle);
  check("L_d_mim", d_mim, r.d_mim);
  const auto rec_img = model_->render(f, batch.labels);
  const auto map_img = model_->render(f, batch.targets);

  // Discriminator update on detached generated images.
  opt_d_->zero_grad();
  {
    const auto out = disc_->forward(torch::cat({batch.images, rec_img.detach(), map_img.detach()}));
    const auto parts = out.realness.split(bsz);
    AttributeLogits on_real;
    for (const auto& l : out.attributes.per_category) on_real.per_category.push_back(l.narrow(0, 0, bsz));
    const auto adv_d = adv_loss_discriminator(parts[0], parts[2], parts[1]);
    const auto attr_d = attr_loss_discriminator(on_real, batch.labels);
    const auto total_d = discriminator_objective(adv_d, attr_d, L.attribute);
    check("L_adv_d", adv_d, r.adv_d);
    check("L_attr_d", attr_d, r.attr_d);
    check("total_d", total_d, r.total_d);
    total_d.backward();
    opt_d_->step();
  }

  // Generator update; the discriminator is a fixed function here.
  opt_g_->zero_grad();
  for (auto& p : disc_->parameters()) p.set_requires_grad(false);
  try {
    const auto out = disc_->forward(torch::cat({rec_img, map_img}));
    const auto parts = out.realness.split(bsz);
    AttributeLogits on_rec, on_map;
    for (const auto& l : out.attributes.per_category) {
      on_rec.per_category.push_back(l.narrow(0, 0, bsz));
      on_map.per_category.push_back(l.narrow(0, bsz, bsz));
    }
    const auto adv_g = adv_loss_generator(parts[1], parts[0]);
    const auto attr_g = attr_loss_generator(on_rec, batch.labels, on_map, batch.targets);
    const auto rec = reconstruction_loss(rec_img, batch.images);
    torch::Tensor perc = torch::zeros({});
    if (judge_) {
      const auto feats = judge_->features(torch::cat({batch.images, rec_img, batch.references, map_img})).split(bsz);
      perc = perceptual_loss(feats[0], feats[1], feats[2], feats[3]);
    }
    const auto total_g = generator_objective(adv_g, d_mle + d_mim, attr_g, rec, perc, L);
    check("L_adv_g", adv_g, r.adv_g);
    check("L_attr_g", attr_g, r.attr_g);
    check("L_rec", rec, r.rec);
    check("L_p", perc, r.perceptual);
    check("total_g", total_g, r.total_g);
    total_g.backward();
    opt_g_->step();
  } catch (...) {
    for (auto& p : disc_->parameters()) p.set_requires_grad(true);
    throw;
  }
  for (auto& p : disc_->parameters()) p.set_requires_grad(true);
  return r;
}

torch::Tensor Trainer::preview_grid(std::size_t count) {
  torch::NoGradGuard guard;
  count = std::min(count, split_.test.size());
  const std::vector<std::size_t> idx(split_.test.begin(), split_.test.begin() + static_cast<std::ptrdiff_t>(count));
  const auto batch = dataset_->batch(idx);
  // Fixed edit so grids are comparable across steps: next color value.
  auto targets = batch.labels.clone();
  const auto colors = dataset_->schema()->cardinality(0);
  targets.select(1, 0).add_(1).remainder_(colors);
  const auto f = model_->encode(batch.images, batch.masks);
  const auto rec = model_->render(f, batch.labels);
  const auto map = model_->render(f, targets);
  const auto diag = model_->render_identity(f);
  std::vector<torch::Tensor> tiles;
  for (const auto& row : {batch.images, rec, map, diag}) {
    for (int64_t i = 0; i < row.size(0); ++i) tiles.push_back(to_u8(row[i]));
  }
  return image_grid(tiles, static_cast<int>(count));
}

void Trainer::save_checkpoint(const fs::path& dir) {
  const auto tmp = fs::path(dir.string() + ".tmp");
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  model_->save_weights(tmp);
  save_module(*disc_, tmp / "discriminator.pt");
  try {
    torch::save(*opt_g_, (tmp / "optimizer_g.pt").string());
    torch::save(*opt_d_, (tmp / "optimizer_d.pt").string());
  } catch (const c10::Error&) {
    throw IoError("cannot write optimizer state under " + tmp.string());
  }
  {
    std::ofstream rng(tmp / "rng.txt");
    rng << rng_ << '\n';
  }
  const auto& schema = dataset_->schema();
  nlohmann::json manifest = {{"schema_hash", schema->hash()},
                             {"schema", schema->to_json()},
                             {"arch", config_.arch.to_json()},
                             {"step", step_},
                             {"config", config_.to_json()},
                             {"parameter_hash", parameter_hash(*model_)},
                             {"judge", config_.judge.string()},
                             {"judge_hash", judge_ ? parameter_hash(*judge_) : std::string()}};
  std::ofstream(tmp / "manifest.json") << manifest.dump(2) << '\n';
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

namespace {

nlohmann::json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("checkpoint: cannot read " + (dir / "manifest.json").string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint: malformed manifest: " + std::string(e.what()));
  }
}

}  // namespace

Trainer Trainer::resume(const fs::path& checkpoint, std::shared_ptr<const data::Dataset> dataset, Judge judge,
                        std::optional<TrainConfig> override_config) {
  const auto manifest = read_manifest(checkpoint);
  if (!dataset) throw ConfigError("trainer: no dataset");
  if (manifest.at("schema_hash").get<std::string>() != dataset->schema()->hash()) {
    throw ConfigError("checkpoint schema hash " + manifest.at("schema_hash").get<std::string>() +
                      " does not match dataset schema " + dataset->schema()->hash());
  }
  auto config = override_config ? *override_config : TrainConfig::from_json(manifest.at("config"));
  if (!(config.arch == ArchConfig::from_json(manifest.at("arch")))) {
    throw ConfigError("checkpoint architecture differs from the configured one");
  }
  Trainer t(std::move(config), std::move(dataset), std::move(judge));
  t.model_->load_weights(checkpoint);
  load_module(*t.disc_, checkpoint / "discriminator.pt");
  try {
    torch::load(*t.opt_g_, (checkpoint / "optimizer_g.pt").string());
    torch::load(*t.opt_d_, (checkpoint / "optimizer_d.pt").string());
  } catch (const c10::Error& e) {
    throw IoError("checkpoint: cannot load optimizer state: " + std::string(e.what_without_backtrace()));
  }
  std::ifstream rng(checkpoint / "rng.txt");
  if (!(rng >> t.rng_)) throw IoError("checkpoint: cannot read rng.txt");
  t.step_ = manifest.at("step").get<std::int64_t>();
  return t;
}

void Trainer::run(const std::function<void(std::int64_t, const losses::LossReport&)>& on_step) {
  fs::create_directories(config_.out_dir);
  if (config_.grid_every > 0) fs::create_directories(config_.out_dir / "grids");
  std::ofstream(config_.out_dir / "config.txt") << config_.to_text();
  JsonlSink metrics(config_.out_dir / "metrics.jsonl");
  while (step_ < config_.steps) {
    const auto batch = next_batch();
    const auto report = train_step(batch);
    ++step_;
    if (step_ % config_.log_every == 0) {
      auto rec = report.to_json();
      rec["step"] = step_;
      metrics.push(std::move(rec));
    }
    if (on_step) on_step(step_, report);
    if (config_.grid_every > 0 && step_ % config_.grid_every == 0) {
      write_png(config_.out_dir / "grids" / ("step_" + std::to_string(step_) + ".png"), preview_grid(6));
    }
    if (config_.checkpoint_every > 0 && step_ % config_.checkpoint_every == 0) {
      save_checkpoint(config_.out_dir / "checkpoint");
    }
  }
  metrics.flush();
  save_checkpoint(config_.out_dir / "final");
}

LoadedCheckpoint load_model_checkpoint(const fs::path& dir, const SchemaPtr& expected_schema) {
  LoadedCheckpoint out;
  out.manifest = read_manifest(dir);
  SchemaPtr schema;
  try {
    schema = AttributeSchema::from_json(out.manifest.at("schema"));
    if (schema->hash() != out.manifest.at("schema_hash").get<std::string>()) {
      throw SchemaError("checkpoint schema does not match its recorded hash");
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint: malformed manifest: " + std::string(e.what()));
  }
  if (expected_schema && *expected_schema != *schema) {
    throw ConfigError("checkpoint schema hash " + schema->hash() + " does not match expected " +
                      expected_schema->hash());
  }
  out.model = AirrModel(ArchConfig::from_json(out.manifest.at("arch")), schema);
  out.model->load_weights(dir);
  out.model->eval();
  for (auto& p : out.model->parameters()) p.set_requires_grad(false);
  return out;
}

// ---------------------------------------------------------------------------
// Sweep

nlohmann::json SweepRow::to_json() const {
  return {{"lambda1", lambdas.disentangle},
          {"lambda2", lambdas.attribute},
          {"lambda3", lambdas.reconstruct},
          {"lambda4", lambdas.perceptual},
          {"mean_tail", mean_tail.to_json()}};
}

std::map<std::string, std::vector<double>> parse_sweep_grid(const std::string& text) {
  std::map<std::string, std::vector<double>> grid;
  std::stringstream cells(text);
  std::string cell;
  while (std::getline(cells, cell, ';')) {
    if (cell.empty()) continue;
    const auto eq = cell.find('=');
    if (eq == std::string::npos) throw ConfigError("sweep: expected name=v1,v2 in '" + cell + "'");
    const auto name = cell.substr(0, eq);
    if (name != "lambda1" && name != "lambda2" && name != "lambda3" && name != "lambda4") {
      throw ConfigError("sweep: unknown parameter '" + name + "'");
    }
    std::stringstream vals(cell.substr(eq + 1));
    std::string v;
    auto& out = grid[name];
    while (std::getline(vals, v, ',')) out.push_back(parse_double(name, v));
    if (out.empty()) throw ConfigError("sweep: no values for '" + name + "'");
  }
  if (grid.empty()) throw ConfigError("sweep: empty grid");
  return grid;
}

std::vector<SweepRow> run_sweep(const TrainConfig& base, const std::map<std::string, std::vector<double>>& grid,
                                std::shared_ptr<const data::Dataset> dataset, const Judge& judge, std::int64_t tail) {
  std::vector<std::pair<std::string, std::vector<double>>> axes(grid.begin(), grid.end());
  std::vector<std::size_t> pos(axes.size(), 0);
  std::vector<SweepRow> rows;
  JsonlSink sink(base.out_dir / "sweep.jsonl", false);
  for (std::size_t cell = 0;; ++cell) {
    TrainConfig c = base;
    for (std::size_t a = 0; a < axes.size(); ++a) c.set(axes[a].first, fmt(axes[a].second[pos[a]]));
    c.out_dir = base.out_dir / ("cell_" + std::to_string(cell));
    c.checkpoint_every = 0;
    c.grid_every = 0;
    Trainer t(c, dataset, judge);
    std::vector<losses::LossReport> history;
    t.run([&](std::int64_t, const losses::LossReport& r) { history.push_back(r); });
    SweepRow row;
    row.lambdas = c.lambdas;
    const auto n = std::min<std::size_t>(history.size(), static_cast<std::size_t>(std::max<std::int64_t>(tail, 1)));
    auto& m = row.mean_tail;
    for (std::size_t i = history.size() - n; i < history.size(); ++i) {
      const auto& h = history[i];
      m.d_mle += h.d_mle / n;
      m.d_mim += h.d_mim / n;
      m.rec += h.rec / n;
      m.adv_g += h.adv_g / n;
      m.adv_d += h.adv_d / n;
      m.attr_g += h.attr_g / n;
      m.attr_d += h.attr_d / n;
      m.perceptual += h.perceptual / n;
      m.total_g += h.total_g / n;
      m.total_d += h.total_d / n;
    }
    sink.push(row.to_json());
    rows.push_back(row);

    std::size_t a = 0;
    for (; a < axes.size(); ++a) {
      if (++pos[a] < axes[a].second.size()) break;
      pos[a] = 0;
    }
    if (a == axes.size()) break;
  }
  sink.flush();
  return rows;
}

}  // namespace airr
