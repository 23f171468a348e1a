#include "airr/jsonl_sink.hpp"

#include "airr/errors.hpp"

namespace airr {

JsonlSink::JsonlSink(const std::filesystem::path& path, bool append) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, append ? std::ios::app : std::ios::trunc);
  if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  worker_ = std::jthread([this](std::stop_token st) { loop(st); });
}

JsonlSink::~JsonlSink() {
  worker_.request_stop();
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void JsonlSink::push(nlohmann::json record) {
  {
    std::lock_guard lock(mu_);
    queue_.push_back(std::move(record));
  }
  cv_.notify_one();
}

void JsonlSink::flush() {
  std::unique_lock lock(mu_);
  drained_.wait(lock, [&] { return queue_.empty() && !writing_; });
}

void JsonlSink::loop(std::stop_token stop) {
  std::unique_lock lock(mu_);
  while (true) {
    cv_.wait(lock, stop, [&] { return !queue_.empty(); });
    if (queue_.empty()) break;  // stop requested and nothing left
    std::deque<nlohmann::json> batch;
    batch.swap(queue_);
    writing_ = true;
    lock.unlock();
    for (const auto& r : batch) out_ << r.dump() << '\n';
    out_.flush();
    lock.lock();
    writing_ = false;
    drained_.notify_all();
  }
  drained_.notify_all();
}

}  // namespace airr
