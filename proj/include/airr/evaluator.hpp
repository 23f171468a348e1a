#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "airr/data.hpp"
#include "airr/model.hpp"
#include "airr/networks.hpp"

namespace airr::eval {

// ---------------------------------------------------------------------------
// Judge

struct JudgeTrainConfig {
  int epochs = 5;
  int batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  std::size_t test_count = 1000;
  std::uint64_t split_seed = 0;
  double required_accuracy = 0.98;
  ArchConfig arch;
};

struct TrainedJudge {
  Judge judge{nullptr};
  std::vector<double> test_accuracy;  // per category
  nlohmann::json manifest;
};

/// Per-category argmax accuracy of `judge` on the given dataset items.
std::vector<double> judge_accuracy(Judge& judge, const data::Dataset& dataset, std::span<const std::size_t> indices);

/// Trains on the split's train part, measures the test part, freezes.
/// Throws JudgeUnqualifiedError (after the judge is fully trained) when any
/// category falls below required_accuracy; `unqualified` receives the
/// result in that case so callers can still inspect it.
TrainedJudge train_judge(const data::Dataset& dataset, const JudgeTrainConfig& config,
                         TrainedJudge* unqualified = nullptr);

/// judge.pt + judge.json (manifest with schema, arch, accuracies, hash).
void save_judge(const TrainedJudge& judge, const std::filesystem::path& dir);
/// Loads and freezes. Throws JudgeUnqualifiedError when the recorded
/// accuracies are below `required_accuracy`.
TrainedJudge load_judge(const std::filesystem::path& dir, double required_accuracy = 0.98);

/// Judge softmax probabilities per category, in batches, without gradients.
std::vector<torch::Tensor> judge_probabilities(Judge& judge, const torch::Tensor& images);

// ---------------------------------------------------------------------------
// Editors: what produces the manipulated images under evaluation.

class Editor {
 public:
  virtual ~Editor() = default;
  /// Images [B,3,S,S] carrying `targets` [B,n]; `indices` are dataset items.
  virtual torch::Tensor edit(const data::Batch& source, const torch::Tensor& targets) = 0;
};

/// The trained model, with ground-truth source labels.
class AirrEditor : public Editor {
 public:
  explicit AirrEditor(AirrModel model) : model_(std::move(model)) {}
  torch::Tensor edit(const data::Batch& source, const torch::Tensor& targets) override;

 private:
  AirrModel model_;
};

/// Returns the input unchanged.
class IdentityEditor : public Editor {
 public:
  torch::Tensor edit(const data::Batch& source, const torch::Tensor&) override { return source.images; }
};

/// Returns a real image whose tuple equals the target (upper bound).
class OracleEditor : public Editor {
 public:
  OracleEditor(std::shared_ptr<const data::Dataset> dataset, data::ReferenceIndex index, std::uint64_t seed)
      : dataset_(std::move(dataset)), index_(std::move(index)), rng_(seed) {}
  torch::Tensor edit(const data::Batch& source, const torch::Tensor& targets) override;

 private:
  std::shared_ptr<const data::Dataset> dataset_;
  data::ReferenceIndex index_;
  data::Rng rng_;
};

// ---------------------------------------------------------------------------
// Metrics

/// For every item, a target tuple differing from the source in `category`
/// only, with the new value drawn uniformly among the others.
torch::Tensor single_category_targets(const torch::Tensor& sources, std::size_t category, const SchemaPtr& schema,
                                      data::Rng& rng);

struct AccuracyResult {
  double rate = 0;
  std::size_t count = 0;
};

/// Fraction of edited images whose judge argmax in `category` equals the target.
AccuracyResult manipulation_accuracy(Editor& editor, Judge& judge, const data::Dataset& dataset,
                                     std::span<const std::size_t> test, std::size_t category, std::uint64_t seed,
                                     int batch_size = 100);

/// Indices of the k nearest gallery rows to every query row (Euclidean,
/// double precision, ties broken by lower index), in ascending distance.
std::vector<std::vector<std::size_t>> nearest_neighbors(const torch::Tensor& queries, const torch::Tensor& gallery,
                                                        std::size_t k);

/// Hit per query: some of its k nearest gallery items has exactly the
/// target tuple. Throws ContractError when k is 0 or exceeds the gallery.
std::vector<bool> retrieval_hits(const torch::Tensor& query_features, const std::vector<std::vector<int>>& targets,
                                 const torch::Tensor& gallery_features,
                                 const std::vector<std::vector<int>>& gallery_tuples, std::size_t k);

struct Gallery {
  std::vector<std::size_t> indices;
  std::vector<std::vector<int>> tuples;
  torch::Tensor features;  // [G, F] float64
};
Gallery build_gallery(Judge& judge, const data::Dataset& dataset, std::span<const std::size_t> indices);

struct RetrievalResult {
  double rate = 0;                    // averaged over categories
  std::vector<double> per_category;
  std::size_t k = 0;
};
RetrievalResult topk_retrieval(Editor& editor, Judge& judge, const data::Dataset& dataset,
                               std::span<const std::size_t> test, const Gallery& gallery, std::size_t k,
                               std::uint64_t seed, int batch_size = 100);

struct CurvePoint {
  double rho = 0;
  std::size_t count = 0;
  double changing = 0;
  double preservation = 0;
};
/// Ranks edits by judge confidence in the target value and reports
/// (changing, preservation) over the top-rho fraction. Fractions that select
/// no item are omitted. Throws ContractError on an empty grid or rho
/// outside (0, 1].
std::vector<CurvePoint> preservation_curve(Editor& editor, Judge& judge, const data::Dataset& dataset,
                                           std::span<const std::size_t> test, std::size_t category,
                                           const std::vector<double>& grid, std::uint64_t seed,
                                           int batch_size = 100);

struct DiagnosticResult {
  std::vector<double> accuracy;  // per category, source attribute on identity-injected outputs
  std::vector<double> chance;    // 1 / |a_i|
  double mean_accuracy() const;
};
DiagnosticResult information_hiding_diagnostic(AirrModel& model, Judge& judge, const data::Dataset& dataset,
                                               std::span<const std::size_t> test, int batch_size = 100);

struct MultiEditResult {
  double both_correct = 0;
  std::size_t count = 0;
  std::int64_t decode_calls = 0;  // total generator passes
  std::int64_t requests = 0;
};
/// Edits two categories at once, one image per request, and counts
/// generator passes.
MultiEditResult multi_attribute_accuracy(AirrModel& model, Judge& judge, const data::Dataset& dataset,
                                         std::span<const std::size_t> test, std::size_t category_a,
                                         std::size_t category_b, std::uint64_t seed);

struct StrengthResult {
  double monotone_fraction = 0;
  std::size_t count = 0;
  std::vector<std::vector<double>> confidence;  // per image, per strength
};
/// Sweeps strength for a single-category edit and checks that judge
/// confidence in the target is non-decreasing.
StrengthResult strength_monotonicity(AirrModel& model, Judge& judge, const data::Dataset& dataset,
                                     std::span<const std::size_t> test, std::size_t category,
                                     const std::vector<double>& strengths, std::uint64_t seed);

}  // namespace airr::eval
