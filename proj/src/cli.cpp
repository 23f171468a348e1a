#include "airr/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "airr/data.hpp"
#include "airr/errors.hpp"
#include "airr/evaluator.hpp"
#include "airr/image_io.hpp"
#include "airr/serve.hpp"
#include "airr/trainer.hpp"

namespace airr::cli {
namespace fs = std::filesystem;
using nlohmann::json;

EditSpec parse_edit(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
    throw ConfigError("edit '" + text + "': expected category=value[:strength]");
  }
  EditSpec e;
  e.category = text.substr(0, eq);
  auto rest = text.substr(eq + 1);
  if (const auto colon = rest.find(':'); colon != std::string::npos) {
    const auto s = rest.substr(colon + 1);
    rest = rest.substr(0, colon);
    std::size_t used = 0;
    try {
      e.strength = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty()) throw ConfigError("edit '" + text + "': strength is not a number");
    if (!(e.strength >= 0.0 && e.strength <= 1.0)) throw ConfigError("edit '" + text + "': strength outside [0, 1]");
  }
  if (rest.empty()) throw ConfigError("edit '" + text + "': empty value");
  e.value = rest;
  return e;
}

namespace {

void echo(std::ostream& out, const std::string& command, const json& config) {
  out << command << " config: " << config.dump() << '\n';
}

std::vector<double> parse_doubles(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (item.empty() || used != item.size()) throw ConfigError(std::string(what) + ": bad number '" + item + "'");
    out.push_back(v);
  }
  return out;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Curve plot: x = changing rate, y = preservation rate, both on [0,1].

struct Canvas {
  int size;
  torch::Tensor px;  // [3,H,W] uint8
  explicit Canvas(int s) : size(s), px(torch::full({3, s, s}, 255, torch::kUInt8)) {}
  void dot(int x, int y, const std::array<float, 3>& rgb) {
    if (x < 0 || y < 0 || x >= size || y >= size) return;
    for (int c = 0; c < 3; ++c) px[c][y][x] = static_cast<int>(rgb[static_cast<std::size_t>(c)] * 255.0f);
  }
  void line(double x0, double y0, double x1, double y1, const std::array<float, 3>& rgb) {
    const int steps = static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      dot(static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))), rgb);
    }
  }
};

void plot_curves(const fs::path& path, const std::vector<std::vector<eval::CurvePoint>>& curves) {
  constexpr int kSize = 320, kMargin = 24;
  Canvas cv(kSize);
  const auto map_x = [&](double v) { return kMargin + v * (kSize - 2 * kMargin); };
  const auto map_y = [&](double v) { return kSize - kMargin - v * (kSize - 2 * kMargin); };
  const std::array<float, 3> axis{0.f, 0.f, 0.f};
  cv.line(map_x(0), map_y(0), map_x(1), map_y(0), axis);
  cv.line(map_x(0), map_y(0), map_x(0), map_y(1), axis);
  for (int t = 1; t <= 4; ++t) {
    cv.line(map_x(t / 4.0), map_y(0), map_x(t / 4.0), map_y(0) + 4, axis);
    cv.line(map_x(0) - 4, map_y(t / 4.0), map_x(0), map_y(t / 4.0), axis);
  }
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const auto rgb = data::palette_color(static_cast<int>(c % 6));
    const auto& pts = curves[c];
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double x = map_x(pts[i].changing), y = map_y(pts[i].preservation);
      for (int dx = -2; dx <= 2; ++dx)
        for (int dy = -2; dy <= 2; ++dy) cv.dot(static_cast<int>(x) + dx, static_cast<int>(y) + dy, rgb);
      if (i > 0) cv.line(map_x(pts[i - 1].changing), map_y(pts[i - 1].preservation), x, y, rgb);
    }
  }
  write_png(path, cv.px);
}

// ---------------------------------------------------------------------------
// Subcommand options

struct GenerateOpts {
  std::string out;
  std::uint64_t seed = 0;
  std::size_t count = 9000;
  unsigned threads = 0;
};

struct JudgeOpts {
  std::string dataset, out;
  eval::JudgeTrainConfig cfg;
};

struct TrainOpts {
  std::string config, resume, sweep;
  std::vector<std::string> sets;
  std::int64_t tail = 20;
};

struct EvalOpts {
  std::string ckpt, judge, dataset, metric, out, plot, category, grid = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0";
  std::string categories, strengths = "0,0.25,0.5,0.75,1";
  std::size_t k = 1;
  std::size_t gallery_size = 2000;
  std::uint64_t seed = 7;
};

struct ManipulateOpts {
  std::string in, mask, ckpt, out, judge;
  std::vector<std::string> edits;
};

struct ServeOpts {
  std::string ckpt, judge, host = "127.0.0.1";
  int port = 8080;
};

int run_generate(const GenerateOpts& o, std::ostream& out) {
  echo(out, "generate-data", {{"out", o.out}, {"seed", o.seed}, {"count", o.count}, {"threads", o.threads}});
  if (o.count == 0) throw ConfigError("--count must be positive");
  data::generate_shapeset(o.out, o.seed, o.count, o.threads);
  out << "wrote " << o.count << " items to " << o.out << '\n';
  return 0;
}

int run_train_judge(const JudgeOpts& o, std::ostream& out) {
  const auto& c = o.cfg;
  echo(out, "train-judge",
       {{"dataset", o.dataset}, {"out", o.out}, {"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr},
        {"seed", c.seed}, {"test_count", c.test_count}, {"split_seed", c.split_seed},
        {"required_accuracy", c.required_accuracy}, {"arch", c.arch.to_json()}});
  const auto dataset = data::Dataset::load(o.dataset);
  eval::TrainedJudge unqualified;
  try {
    const auto judge = eval::train_judge(dataset, c, &unqualified);
    eval::save_judge(judge, o.out);
    out << "judge accuracy " << json(judge.test_accuracy).dump() << " saved to " << o.out << '\n';
  } catch (const JudgeUnqualifiedError&) {
    eval::save_judge(unqualified, o.out);
    throw;
  }
  return 0;
}

TrainConfig effective_train_config(const TrainOpts& o, const std::optional<TrainConfig>& base) {
  TrainConfig cfg = base ? *base : TrainConfig{};
  if (!o.config.empty()) cfg = TrainConfig::load(o.config);
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set '" + s + "': expected key=value");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

eval::TrainedJudge maybe_judge(const TrainConfig& cfg) {
  if (cfg.judge.empty()) return {};
  return eval::load_judge(cfg.judge);
}

int run_train(const TrainOpts& o, std::ostream& out) {
  if (o.config.empty() && o.resume.empty()) throw ConfigError("train: --config or --resume is required");
  std::optional<TrainConfig> base;
  if (!o.resume.empty()) {
    std::ifstream in(fs::path(o.resume) / "manifest.json");
    if (!in) throw IoError("cannot read " + (fs::path(o.resume) / "manifest.json").string());
    base = TrainConfig::from_json(json::parse(in).at("config"));
  }
  const auto cfg = effective_train_config(o, base);
  out << "train config:\n" << cfg.to_text();
  out.flush();
  const auto dataset = std::make_shared<const data::Dataset>(data::Dataset::load(cfg.dataset));
  const auto judge = maybe_judge(cfg);

  if (!o.sweep.empty()) {
    const auto rows = run_sweep(cfg, parse_sweep_grid(o.sweep), dataset, judge.judge, o.tail);
    for (const auto& r : rows) out << r.to_json().dump() << '\n';
    return 0;
  }
  auto trainer = o.resume.empty() ? Trainer(cfg, dataset, judge.judge) : Trainer::resume(o.resume, dataset, judge.judge, cfg);
  const auto every = std::max<std::int64_t>(1, cfg.steps / 100);
  trainer.run([&](std::int64_t step, const losses::LossReport& r) {
    if (step % every == 0 || step == cfg.steps) {
      out << "step " << step << " total_g " << r.total_g << " total_d " << r.total_d << " rec " << r.rec << '\n';
      out.flush();
    }
  });
  out << "final checkpoint " << (cfg.out_dir / "final").string() << '\n';
  return 0;
}

int run_eval(const EvalOpts& o, std::ostream& out) {
  auto ckpt = load_model_checkpoint(o.ckpt);
  const auto run_cfg = TrainConfig::from_json(ckpt.manifest.at("config"));
  const fs::path judge_dir = o.judge.empty() ? run_cfg.judge : fs::path(o.judge);
  const fs::path dataset_dir = o.dataset.empty() ? run_cfg.dataset : fs::path(o.dataset);
  if (judge_dir.empty()) throw ConfigError("eval: no judge given and none recorded in the checkpoint");
  json config = {{"ckpt", o.ckpt}, {"judge", judge_dir.string()}, {"dataset", dataset_dir.string()},
                 {"metric", o.metric}, {"k", o.k}, {"seed", o.seed}, {"category", o.category},
                 {"grid", o.grid}, {"gallery_size", o.gallery_size}, {"categories", o.categories},
                 {"strengths", o.strengths}, {"test_count", run_cfg.test_count}, {"split_seed", run_cfg.split_seed}};
  echo(out, "eval", config);

  auto judge = eval::load_judge(judge_dir);
  const auto dataset = std::make_shared<const data::Dataset>(data::Dataset::load(dataset_dir));
  if (*dataset->schema() != *ckpt.model->schema()) throw ConfigError("eval: dataset schema differs from checkpoint");
  if (*judge.judge->schema() != *ckpt.model->schema()) throw ConfigError("eval: judge schema differs from checkpoint");
  const auto split = data::DatasetSplit::make(dataset->size(), run_cfg.test_count, run_cfg.split_seed);
  const auto& schema = *dataset->schema();
  const auto judge_hash = parameter_hash(*judge.judge);

  std::vector<std::size_t> cats;
  if (o.category.empty()) {
    for (std::size_t c = 0; c < schema.num_categories(); ++c) cats.push_back(c);
  } else {
    cats.push_back(schema.category_index(o.category));
  }

  json results;
  eval::AirrEditor editor(ckpt.model);
  if (o.metric == "accuracy") {
    double sum = 0;
    for (auto c : cats) {
      const auto r = eval::manipulation_accuracy(editor, judge.judge, *dataset, split.test, c, o.seed);
      results["per_category"][schema.category(c).name] = r.rate;
      results["count"] = r.count;
      sum += r.rate;
    }
    results["mean"] = sum / static_cast<double>(cats.size());
  } else if (o.metric == "retrieval") {
    std::vector<std::size_t> gal(split.train.begin(),
                                 split.train.begin() + static_cast<std::ptrdiff_t>(std::min(o.gallery_size, split.train.size())));
    if (o.k > gal.size()) throw ConfigError("eval: --k exceeds the gallery size " + std::to_string(gal.size()));
    const auto gallery = eval::build_gallery(judge.judge, *dataset, gal);
    const auto r = eval::topk_retrieval(editor, judge.judge, *dataset, split.test, gallery, o.k, o.seed);
    for (std::size_t c = 0; c < schema.num_categories(); ++c) results["per_category"][schema.category(c).name] = r.per_category[c];
    results["rate"] = r.rate;
    results["k"] = r.k;
    results["gallery_size"] = gal.size();
  } else if (o.metric == "preservation") {
    const auto grid = parse_doubles(o.grid, "--grid");
    std::vector<std::vector<eval::CurvePoint>> curves;
    for (auto c : cats) {
      curves.push_back(eval::preservation_curve(editor, judge.judge, *dataset, split.test, c, grid, o.seed));
      json pts = json::array();
      for (const auto& p : curves.back()) {
        pts.push_back({{"rho", p.rho}, {"count", p.count}, {"changing", p.changing}, {"preservation", p.preservation}});
      }
      results["curves"][schema.category(c).name] = pts;
    }
    if (!o.plot.empty()) {
      plot_curves(o.plot, curves);
      results["plot"] = o.plot;
    }
  } else if (o.metric == "diagnostic") {
    const auto r = eval::information_hiding_diagnostic(ckpt.model, judge.judge, *dataset, split.test);
    for (std::size_t c = 0; c < schema.num_categories(); ++c) {
      results["per_category"][schema.category(c).name] = {{"accuracy", r.accuracy[c]}, {"chance", r.chance[c]}};
    }
    results["mean_accuracy"] = r.mean_accuracy();
  } else if (o.metric == "multi") {
    std::vector<std::size_t> pair;
    if (o.categories.empty()) {
      pair = {0, 1};
    } else {
      std::stringstream ss(o.categories);
      std::string item;
      while (std::getline(ss, item, ',')) pair.push_back(schema.category_index(item));
    }
    if (pair.size() != 2 || pair[0] == pair[1]) throw ConfigError("--categories needs two distinct categories");
    const auto r = eval::multi_attribute_accuracy(ckpt.model, judge.judge, *dataset, split.test, pair[0], pair[1], o.seed);
    results = {{"both_correct", r.both_correct}, {"count", r.count}, {"decode_calls", r.decode_calls},
               {"requests", r.requests}};
  } else if (o.metric == "strength") {
    const auto strengths = parse_doubles(o.strengths, "--strengths");
    const auto r = eval::strength_monotonicity(ckpt.model, judge.judge, *dataset, split.test, cats.front(), strengths, o.seed);
    json mean = json::array();
    for (std::size_t s = 0; s < strengths.size(); ++s) {
      double acc = 0;
      for (const auto& row : r.confidence) acc += row[s];
      mean.push_back(r.confidence.empty() ? 0.0 : acc / static_cast<double>(r.confidence.size()));
    }
    results = {{"monotone_fraction", r.monotone_fraction}, {"count", r.count}, {"strengths", strengths},
               {"mean_confidence", mean}};
  } else {
    throw ConfigError("eval: unknown metric '" + o.metric + "'");
  }
  if (parameter_hash(*judge.judge) != judge_hash) throw ContractError("eval: judge parameters changed");

  const json report = {{"metric", o.metric}, {"config", config}, {"results", results}};
  if (!o.out.empty()) write_json(o.out, report);
  out << report.dump() << '\n';
  return 0;
}

int run_manipulate(const ManipulateOpts& o, std::ostream& out) {
  auto ckpt = load_model_checkpoint(o.ckpt);
  auto& model = ckpt.model;
  const fs::path judge_dir = o.judge.empty() ? fs::path(ckpt.manifest.value("judge", "")) : fs::path(o.judge);
  echo(out, "manipulate",
       {{"in", o.in}, {"mask", o.mask}, {"ckpt", o.ckpt}, {"out", o.out}, {"judge", judge_dir.string()}, {"edits", o.edits}});
  const auto& schema = *model->schema();
  const auto n = static_cast<int64_t>(schema.num_categories());
  auto targets = torch::zeros({1, n}, torch::kInt64);
  auto strengths = torch::zeros({1, n});
  std::vector<bool> seen(schema.num_categories(), false);
  for (const auto& text : o.edits) {
    const auto e = parse_edit(text);
    const auto c = schema.category_index(e.category);
    if (seen[c]) throw ConfigError("category edited twice: " + e.category);
    seen[c] = true;
    targets[0][static_cast<int64_t>(c)] = schema.value_index(c, e.value);
    strengths[0][static_cast<int64_t>(c)] = e.strength;
  }
  const auto size = model->arch().image_size;
  const auto image = read_png(o.in, 3);
  if (image.size(1) != size || image.size(2) != size) {
    throw DataError("--in: expected a " + std::to_string(size) + "x" + std::to_string(size) + " image");
  }
  torch::Tensor mask = torch::ones({1, 1, size, size});
  if (!o.mask.empty()) {
    const auto m = read_png(o.mask, 1);
    if (m.size(1) != size || m.size(2) != size) throw DataError("--mask: size differs from the image");
    mask = m.gt(127).to(torch::kFloat32).unsqueeze(0);
  }
  const auto result = model->edit(to_unit_float(image).unsqueeze(0), mask, targets, strengths);
  write_png(o.out, to_u8(result.images[0]));

  json prediction = json::object();
  if (!judge_dir.empty()) {
    auto judge = eval::load_judge(judge_dir);
    const auto probs = eval::judge_probabilities(judge.judge, result.images);
    for (std::size_t c = 0; c < schema.num_categories(); ++c) {
      const auto v = probs[c][0].argmax().item<int64_t>();
      prediction[schema.category(c).name] = {{"value", schema.category(c).values[static_cast<std::size_t>(v)]},
                                             {"confidence", probs[c][0][v].item<double>()}};
    }
  }
  out << json{{"out", o.out}, {"predicted_attributes", prediction}}.dump() << '\n';
  return 0;
}

int run_serve(const ServeOpts& o, std::ostream& out) {
  echo(out, "serve", {{"ckpt", o.ckpt}, {"judge", o.judge}, {"host", o.host}, {"port", o.port}});
  InferenceService service;
  httplib::Server server;
  service.bind(server);
  if (!server.bind_to_port(o.host, o.port)) throw IoError("cannot bind " + o.host + ":" + std::to_string(o.port));
  // Endpoints answer 503 until the model is in place.
  std::jthread listener([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  try {
    service.load(o.ckpt, o.judge);
  } catch (...) {
    server.stop();
    throw;
  }
  out << "serving on http://" << o.host << ":" << o.port << "/v1/\n";
  out.flush();
  return 0;  // jthread joins when the server stops
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attribute removal and reconstruction for image manipulation", "airr"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  GenerateOpts gen;
  auto* g = app.add_subcommand("generate-data", "Render the ShapeSet dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Dataset seed")->capture_default_str();
  g->add_option("--count", gen.count, "Number of items")->capture_default_str();
  g->add_option("--threads", gen.threads, "Worker threads (0 = hardware)")->capture_default_str();

  JudgeOpts jo;
  auto* j = app.add_subcommand("train-judge", "Train the evaluation classifier");
  j->add_option("--dataset", jo.dataset, "Dataset directory")->required();
  j->add_option("--out", jo.out, "Output directory")->required();
  j->add_option("--epochs", jo.cfg.epochs, "Epochs")->capture_default_str();
  j->add_option("--batch-size", jo.cfg.batch_size, "Batch size")->capture_default_str();
  j->add_option("--lr", jo.cfg.lr, "Adam learning rate")->capture_default_str();
  j->add_option("--seed", jo.cfg.seed, "Seed")->capture_default_str();
  j->add_option("--test-count", jo.cfg.test_count, "Held-out items")->capture_default_str();
  j->add_option("--split-seed", jo.cfg.split_seed, "Split seed")->capture_default_str();
  j->add_option("--required-accuracy", jo.cfg.required_accuracy, "Minimum per-category test accuracy")
      ->capture_default_str();
  j->add_option("--channels", jo.cfg.arch.judge_channels, "First-layer width")->capture_default_str();
  j->add_option("--features", jo.cfg.arch.judge_features, "Penultimate width")->capture_default_str();

  TrainOpts to;
  auto* t = app.add_subcommand("train", "Train the manipulation model");
  t->add_option("--config", to.config, "Flat key: value config file");
  t->add_option("--resume", to.resume, "Checkpoint directory to continue from");
  t->add_option("--set", to.sets, "Override one config key (key=value), repeatable");
  t->add_option("--sweep", to.sweep, "Lambda grid, e.g. lambda1=0,0.25;lambda2=0.125");
  t->add_option("--sweep-tail", to.tail, "Steps averaged per sweep cell")->capture_default_str();

  EvalOpts eo;
  auto* e = app.add_subcommand("eval", "Compute an evaluation metric");
  e->add_option("--ckpt", eo.ckpt, "Checkpoint directory")->required();
  e->add_option("--metric", eo.metric, "Metric")
      ->required()
      ->check(CLI::IsMember({"accuracy", "retrieval", "preservation", "diagnostic", "multi", "strength"}));
  e->add_option("--judge", eo.judge, "Judge directory (default: the one recorded in the checkpoint)");
  e->add_option("--dataset", eo.dataset, "Dataset directory (default: the training dataset)");
  e->add_option("--k", eo.k, "Neighbors for retrieval")->check(CLI::PositiveNumber)->capture_default_str();
  e->add_option("--gallery-size", eo.gallery_size, "Retrieval gallery size")->capture_default_str();
  e->add_option("--out", eo.out, "Write the JSON report here");
  e->add_option("--plot", eo.plot, "Write the preservation curves as PNG");
  e->add_option("--category", eo.category, "Restrict to one category");
  e->add_option("--categories", eo.categories, "Two categories for --metric multi (a,b)");
  e->add_option("--grid", eo.grid, "Preservation fractions")->capture_default_str();
  e->add_option("--strengths", eo.strengths, "Strength sweep for --metric strength")->capture_default_str();
  e->add_option("--seed", eo.seed, "Target sampling seed")->capture_default_str();

  ManipulateOpts mo;
  auto* m = app.add_subcommand("manipulate", "Edit one image in-process");
  m->add_option("--in", mo.in, "Input PNG")->required();
  m->add_option("--mask", mo.mask, "Foreground mask PNG (default: all foreground)");
  m->add_option("--edit", mo.edits, "category=value[:strength], repeatable");
  m->add_option("--ckpt", mo.ckpt, "Checkpoint directory")->required();
  m->add_option("--out", mo.out, "Output PNG")->required();
  m->add_option("--judge", mo.judge, "Judge directory (default: the one recorded in the checkpoint)");

  ServeOpts so;
  auto* s = app.add_subcommand("serve", "Run the HTTP inference service");
  s->add_option("--ckpt", so.ckpt, "Checkpoint directory")->required();
  s->add_option("--judge", so.judge, "Judge directory")->required();
  s->add_option("--port", so.port, "Port")->capture_default_str();
  s->add_option("--host", so.host, "Bind address")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (g->parsed()) return run_generate(gen, out);
    if (j->parsed()) return run_train_judge(jo, out);
    if (t->parsed()) return run_train(to, out);
    if (e->parsed()) return run_eval(eo, out);
    if (m->parsed()) return run_manipulate(mo, out);
    if (s->parsed()) return run_serve(so, out);
    return 2;
  } catch (const UserError& ex) {
    err << "error: " << ex.what() << '\n';
    return 1;
  } catch (const EvaluationError& ex) {
    err << "evaluation error: " << ex.what() << '\n';
    return 1;
  } catch (const nlohmann::json::exception& ex) {
    err << "error: malformed JSON: " << ex.what() << '\n';
    return 1;
  } catch (const std::exception& ex) {
    err << "internal error: " << ex.what() << '\n';
    return 2;
  }
}

}  // namespace airr::cli
