#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dppt::labels {

struct PendingEpisode {
  std::uint64_t id = 0;
  std::string task;
  nlohmann::json trace;
};

struct LabelEntry {
  std::uint64_t id = 0;
  double value = 0.0;
};

struct Status {
  std::size_t iteration = 0;
  std::size_t episode = 0;
  double mean_reward = 0.0;
};

enum class PostResult { ok, not_found, duplicate, invalid_value, closed };
const char* to_string(PostResult r);

// Episodes waiting for a human reward. The trainer enqueues and blocks on
// wait_for_label; the HTTP service lists episodes and posts labels. All
// access is serialized; the first label posted for an episode wins.
class LabelQueue {
 public:
  explicit LabelQueue(std::chrono::milliseconds timeout = std::chrono::minutes(10)) : timeout_(timeout) {}

  std::uint64_t enqueue(std::string task, nlohmann::json trace);
  // Label value, or empty on timeout or when the queue is closed.
  std::optional<double> wait_for_label(std::uint64_t id);

  PostResult post_label(std::uint64_t id, double value);
  std::vector<PendingEpisode> pending() const;
  std::optional<nlohmann::json> trace(std::uint64_t id) const;
  // Labels in the order they were accepted.
  std::vector<LabelEntry> label_log() const;

  void set_status(const Status& s);
  Status status() const;

  void close();
  bool closed() const;
  std::chrono::milliseconds timeout() const { return timeout_; }

 private:
  struct Entry {
    PendingEpisode episode;
    std::optional<double> label;
    bool expired = false;
  };

  mutable std::mutex mutex_;
  std::condition_variable labelled_;
  std::chrono::milliseconds timeout_;
  std::map<std::uint64_t, Entry> entries_;
  std::vector<std::uint64_t> order_;
  std::vector<LabelEntry> log_;
  std::uint64_t next_id_ = 1;
  Status status_;
  bool closed_ = false;
};

// Label log file: one JSON object per line, {"episode": n, "id": k, "value": v}.
struct LoggedLabel {
  std::size_t episode = 0;  // global episode index within the run
  std::uint64_t id = 0;
  double value = 0.0;
};
void append_label(const std::filesystem::path& path, const LoggedLabel& label);
std::vector<LoggedLabel> read_label_log(const std::filesystem::path& path);

}  // namespace dppt::labels
