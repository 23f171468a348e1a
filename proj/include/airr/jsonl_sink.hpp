#pragma once

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include <json.hpp>

namespace airr {

/// Appends one JSON object per line from a background thread. push() never
/// blocks on file I/O; the destructor drains the queue.
class JsonlSink {
 public:
  explicit JsonlSink(const std::filesystem::path& path, bool append = true);
  ~JsonlSink();
  JsonlSink(const JsonlSink&) = delete;
  JsonlSink& operator=(const JsonlSink&) = delete;

  void push(nlohmann::json record);
  /// Blocks until everything pushed so far is on disk.
  void flush();

 private:
  void loop(std::stop_token stop);

  std::ofstream out_;
  std::mutex mu_;
  std::condition_variable_any cv_;
  std::condition_variable drained_;
  std::deque<nlohmann::json> queue_;
  bool writing_ = false;
  std::jthread worker_;
};

}  // namespace airr
