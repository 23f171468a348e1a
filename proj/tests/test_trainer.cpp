#include "testing.hpp"

#include <fstream>
#include <limits>

#include "airr/errors.hpp"
#include "airr/image_io.hpp"
#include "airr/trainer.hpp"
#include "fixtures.hpp"

using namespace airr;
using airr::testing::frozen_judge;
using airr::testing::scratch;
using airr::testing::small_dataset;
using airr::testing::tiny_arch;
using airr::testing::tiny_config;
namespace fs = std::filesystem;

namespace {

std::vector<losses::LossReport> run_steps(Trainer& t, int n) {
  std::vector<losses::LossReport> out;
  for (int i = 0; i < n; ++i) out.push_back(t.train_step(t.next_batch()));
  return out;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

}  // namespace

TEST_CASE("config text round-trips and overrides apply") {
  const auto c = TrainConfig::parse(
      "dataset: data/shapeset\n"
      "judge: runs/judge\n"
      "lambda1: 0.5\n"
      "lambda4: 0\n"
      "batch_size: 16\n"
      "steps: 300\n"
      "arch.fg_channels: 32\n");
  CHECK(c.dataset == "data/shapeset");
  CHECK(c.lambdas.disentangle == 0.5);
  CHECK(c.lambdas.attribute == 0.125);
  CHECK(c.lambdas.perceptual == 0.0);
  CHECK(c.batch_size == 16);
  CHECK(c.steps == 300);
  CHECK(c.arch.fg_channels == 32);

  const auto again = TrainConfig::parse(c.to_text());
  CHECK(again.to_json() == c.to_json());
  CHECK(TrainConfig::from_json(c.to_json()).to_json() == c.to_json());

  auto odd = c;
  odd.dataset = "runs/a: b #1";
  odd.judge = "";
  CHECK(TrainConfig::parse(odd.to_text()).to_json() == odd.to_json());

  auto d = c;
  d.set("lr", "0.001");
  d.set("lambda2", "0.25");
  CHECK(d.lr == 0.001);
  CHECK(d.lambdas.attribute == 0.25);
}

TEST_CASE("config rejects unknown keys, nested values and bad numbers") {
  CHECK_THROWS_AS(TrainConfig::parse("stepz: 10\n"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::parse("steps: [1, 2]\n"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::parse("steps: ten\n"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::parse("batch_size: 1.5\n"), ConfigError);
  TrainConfig c;
  CHECK_THROWS_AS(c.set("nope", "1"), ConfigError);
  c.lr = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lambdas.disentangle = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.margin = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("seeded training reproduces the loss stream") {
  const auto ds = small_dataset();
  auto cfg = tiny_config(scratch("det"));
  const auto judge = frozen_judge(cfg.arch, ds->schema());
  Trainer a(cfg, ds, judge);
  Trainer b(cfg, ds, judge);
  const auto ra = run_steps(a, 100);
  const auto rb = run_steps(b, 100);
  REQUIRE(ra.size() == rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    INFO("step " << i);
    CHECK(ra[i] == rb[i]);
  }
  CHECK(parameter_hash(*a.model()) == parameter_hash(*b.model()));

  cfg.seed = 2;
  Trainer c(cfg, ds, judge);
  CHECK_FALSE(run_steps(c, 3)[0] == ra[0]);
}

TEST_CASE("zero lambdas reduce the objectives to the adversarial terms") {
  const auto ds = small_dataset();
  auto cfg = tiny_config(scratch("zero"));
  cfg.lambdas = {0, 0, 0, 0};
  Trainer t(cfg, ds, nullptr);
  for (const auto& r : run_steps(t, 5)) {
    CHECK(r.total_g == r.adv_g);
    CHECK(r.total_d == r.adv_d);
    CHECK(r.perceptual == 0.0);
  }
}

TEST_CASE("a step moves the discriminator and never the judge") {
  const auto ds = small_dataset();
  const auto cfg = tiny_config(scratch("frozen"));
  const auto judge = frozen_judge(cfg.arch, ds->schema());
  Trainer t(cfg, ds, judge);
  const auto judge_before = parameter_hash(*judge);
  const auto d_before = parameter_hash(*t.discriminator());
  const auto g_before = parameter_hash(*t.model());
  t.train_step(t.next_batch());
  CHECK(parameter_hash(*t.discriminator()) != d_before);
  CHECK(parameter_hash(*t.model()) != g_before);
  CHECK(parameter_hash(*judge) == judge_before);
  for (const auto& p : t.discriminator()->parameters()) CHECK(p.requires_grad());
}

TEST_CASE("a judge is required when the perceptual weight is positive") {
  const auto ds = small_dataset();
  const auto cfg = tiny_config(scratch("nojudge"));
  CHECK_THROWS_AS(Trainer(cfg, ds, nullptr), ConfigError);
  Judge unfrozen(cfg.arch, ds->schema());
  CHECK_THROWS_AS(Trainer(cfg, ds, unfrozen), ConfigError);
}

TEST_CASE("resume continues exactly where an uninterrupted run would be") {
  const auto ds = small_dataset();
  auto cfg = tiny_config(scratch("resume_full"));
  cfg.steps = 200;
  const auto judge = frozen_judge(cfg.arch, ds->schema());

  std::vector<losses::LossReport> straight;
  Trainer full(cfg, ds, judge);
  full.run([&](std::int64_t, const losses::LossReport& r) { straight.push_back(r); });

  auto half = cfg;
  half.out_dir = scratch("resume_half");
  half.steps = 100;
  Trainer first(half, ds, judge);
  first.run();
  REQUIRE(fs::exists(half.out_dir / "final" / "manifest.json"));

  auto rest = cfg;
  rest.out_dir = scratch("resume_rest");
  auto second = Trainer::resume(half.out_dir / "final", ds, judge, rest);
  CHECK(second.step() == 100);
  std::vector<losses::LossReport> resumed;
  second.run([&](std::int64_t, const losses::LossReport& r) { resumed.push_back(r); });
  REQUIRE(resumed.size() == 100);
  for (std::size_t i = 0; i < resumed.size(); ++i) {
    INFO("step " << 101 + i);
    CHECK(resumed[i] == straight[100 + i]);
  }
  CHECK(parameter_hash(*second.model()) == parameter_hash(*full.model()));
  CHECK(parameter_hash(*second.discriminator()) == parameter_hash(*full.discriminator()));
}

TEST_CASE("run writes metrics, config, grids and checkpoints") {
  const auto ds = small_dataset();
  auto cfg = tiny_config(scratch("run_outputs"));
  cfg.steps = 6;
  cfg.checkpoint_every = 3;
  cfg.grid_every = 3;
  cfg.log_every = 2;
  const auto judge = frozen_judge(cfg.arch, ds->schema());
  Trainer t(cfg, ds, judge);
  t.run();
  CHECK(count_lines(cfg.out_dir / "metrics.jsonl") == 3);
  CHECK(TrainConfig::load(cfg.out_dir / "config.txt").to_json() == cfg.to_json());
  CHECK(fs::exists(cfg.out_dir / "grids" / "step_3.png"));
  CHECK(fs::exists(cfg.out_dir / "grids" / "step_6.png"));
  CHECK(fs::exists(cfg.out_dir / "checkpoint" / "manifest.json"));
  CHECK_FALSE(fs::exists(cfg.out_dir / "checkpoint.tmp"));

  std::ifstream in(cfg.out_dir / "final" / "manifest.json");
  const auto manifest = nlohmann::json::parse(in);
  CHECK(manifest.at("step") == 6);
  CHECK(manifest.at("schema_hash") == ds->schema()->hash());
  CHECK(manifest.at("parameter_hash") == parameter_hash(*t.model()));
  CHECK(manifest.at("judge_hash") == parameter_hash(*judge));

  const auto grid = read_png(cfg.out_dir / "grids" / "step_6.png", 3);
  CHECK(grid.size(1) == 4 * 66 + 2);
  CHECK(grid.size(2) == 6 * 66 + 2);

  const auto loaded = load_model_checkpoint(cfg.out_dir / "final", ds->schema());
  CHECK(parameter_hash(*loaded.model) == parameter_hash(*t.model()));
}

TEST_CASE("checkpoints with a different schema are refused") {
  const auto ds = small_dataset();
  auto cfg = tiny_config(scratch("schema_mismatch"));
  cfg.steps = 1;
  Trainer t(cfg, ds, frozen_judge(cfg.arch, ds->schema()));
  t.run();
  const auto other = std::make_shared<const AttributeSchema>(std::vector<AttributeSchema::Category>{
      {"color", {"red", "green"}}, {"shape", {"circle", "square", "triangle"}}});
  CHECK_THROWS_AS(load_model_checkpoint(cfg.out_dir / "final", other), ConfigError);

  // Tampered manifest: the dataset no longer matches the stored hash.
  const auto path = cfg.out_dir / "final" / "manifest.json";
  std::ifstream in(path);
  auto manifest = nlohmann::json::parse(in);
  in.close();
  manifest["schema_hash"] = std::string(64, '0');
  std::ofstream(path) << manifest.dump();
  CHECK_THROWS_AS(Trainer::resume(cfg.out_dir / "final", ds, frozen_judge(cfg.arch, ds->schema())), ConfigError);
  CHECK_THROWS_AS(load_model_checkpoint(cfg.out_dir / "final"), SchemaError);

  auto wider = cfg;
  wider.arch.fg_channels = 16;
  manifest["schema_hash"] = ds->schema()->hash();
  std::ofstream(path) << manifest.dump();
  CHECK_THROWS_AS(Trainer::resume(cfg.out_dir / "final", ds, frozen_judge(cfg.arch, ds->schema()), wider),
                  ConfigError);
}

TEST_CASE("non-finite losses abort with a dump") {
  const auto ds = small_dataset();
  const auto cfg = tiny_config(scratch("nonfinite"));
  Trainer t(cfg, ds, frozen_judge(cfg.arch, ds->schema()));
  auto batch = t.next_batch();
  batch.images[0][0][0][0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(t.train_step(batch), NonFiniteLossError);
  bool dumped = false;
  for (const auto& e : fs::directory_iterator(cfg.out_dir)) {
    dumped |= e.path().filename().string().rfind("nonfinite_step_", 0) == 0;
  }
  CHECK(dumped);
  for (const auto& p : t.discriminator()->parameters()) CHECK(p.requires_grad());
}

TEST_CASE("smoke run lowers the reconstruction loss") {
  const auto ds = small_dataset();
  auto cfg = tiny_config(scratch("smoke"));
  cfg.arch = ArchConfig{};
  cfg.arch.base_channels = 8;
  cfg.arch.fg_channels = 32;
  cfg.arch.res_blocks = 2;
  cfg.arch.judge_channels = 8;
  cfg.arch.judge_features = 32;
  cfg.batch_size = 8;
  cfg.steps = 200;
  // With the default weights the adversarial terms dominate the first few
  // hundred steps and L_rec only starts falling later.
  cfg.lr = 1e-3;
  cfg.lambdas.reconstruct = 10;
  std::vector<double> rec;
  Trainer t(cfg, ds, frozen_judge(cfg.arch, ds->schema()));
  t.run([&](std::int64_t, const losses::LossReport& r) { rec.push_back(r.rec); });
  REQUIRE(rec.size() == 200);
  MESSAGE("L_rec step 1 = " << rec.front() << ", step 200 = " << rec.back());
  CHECK(rec.back() < rec.front());
}

TEST_CASE("reconstruction through the edit path equals direct rendering") {
  const auto ds = small_dataset();
  const auto cfg = tiny_config(scratch("edit_path"));
  Trainer t(cfg, ds, frozen_judge(cfg.arch, ds->schema()));
  run_steps(t, 3);
  auto& model = t.model();
  model->eval();
  const std::vector<std::size_t> idx = {0, 1, 2, 3, 4};
  const auto batch = ds->batch(idx);
  torch::NoGradGuard guard;
  const auto f = model->encode(batch.images, batch.masks);
  const auto direct = model->render(f, batch.labels);
  const auto via_edit = model->reconstruct(batch.images, batch.masks, batch.labels);
  CHECK(torch::equal(direct, via_edit.images));

  // Full-strength edits land on the target table rows.
  auto targets = batch.labels.clone();
  targets.select(1, 1).add_(1).remainder_(3);
  const auto ones = torch::ones(targets.sizes());
  const auto edited = model->edit(batch.images, batch.masks, targets, ones, batch.labels);
  CHECK(torch::allclose(edited.images, model->render(f, targets), 0, 1e-6));

  // Zero strengths ignore the targets entirely.
  const auto zero = model->edit(batch.images, batch.masks, targets, torch::zeros(targets.sizes()), batch.labels);
  CHECK(torch::equal(zero.images, direct));
}

TEST_CASE("sweep grid parsing and one row per cell") {
  const auto grid = parse_sweep_grid("lambda1=0,0.25;lambda3=1");
  REQUIRE(grid.size() == 2);
  CHECK(grid.at("lambda1") == std::vector<double>{0, 0.25});
  CHECK_THROWS_AS(parse_sweep_grid("lambda9=1"), ConfigError);
  CHECK_THROWS_AS(parse_sweep_grid(""), ConfigError);
  CHECK_THROWS_AS(parse_sweep_grid("lambda1"), ConfigError);
  CHECK_THROWS_AS(parse_sweep_grid("lambda1=a"), ConfigError);

  const auto ds = small_dataset();
  auto cfg = tiny_config(scratch("sweep"));
  cfg.steps = 3;
  const auto rows = run_sweep(cfg, grid, ds, frozen_judge(cfg.arch, ds->schema()), 2);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].lambdas.disentangle == 0.0);
  CHECK(rows[1].lambdas.disentangle == 0.25);
  CHECK(rows[0].mean_tail.d_mle > 0);
  CHECK(count_lines(cfg.out_dir / "sweep.jsonl") == 2);
  CHECK(fs::exists(cfg.out_dir / "cell_1" / "final" / "manifest.json"));
}
