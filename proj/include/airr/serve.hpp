#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <string>

#include <json.hpp>

#include "airr/evaluator.hpp"
#include "airr/model.hpp"
#include "airr/networks.hpp"

namespace httplib {
class Server;
}

namespace airr {

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Request handling for the /v1/ endpoints, independent of any socket. The
/// model is installed once; afterwards every handler is read-only, so
/// concurrent calls are safe.
class InferenceService {
 public:
  InferenceService() = default;

  /// Loads a checkpoint directory and a judge directory.
  void load(const std::filesystem::path& checkpoint, const std::filesystem::path& judge_dir);
  /// Installs already-loaded networks. `checkpoint_hash`/`judge_hash` are
  /// reported by /v1/healthz.
  void install(AirrModel model, Judge judge, std::string checkpoint_hash, std::string judge_hash);
  bool loaded() const { return loaded_.load(std::memory_order_acquire); }

  HttpResponse handle(const std::string& method, const std::string& path, const std::string& body) const;

  /// Registers every endpoint on an httplib server.
  void bind(httplib::Server& server) const;

  /// Generator passes so far (instrumentation).
  std::int64_t decode_calls() const;

 private:
  HttpResponse schema() const;
  HttpResponse healthz() const;
  HttpResponse manipulate(const nlohmann::json& request) const;
  HttpResponse reconstruct(const nlohmann::json& request) const;
  HttpResponse diagnose(const nlohmann::json& request) const;

  struct Loaded {
    AirrModel model{nullptr};
    Judge judge{nullptr};
    std::string checkpoint_hash;
    std::string judge_hash;
  };
  std::shared_ptr<Loaded> state_;
  std::atomic<bool> loaded_{false};
};

}  // namespace airr
