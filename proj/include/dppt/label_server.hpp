#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <thread>

#include "dppt/label_queue.hpp"

namespace httplib {
class Server;
}

namespace dppt::labels {

// JSON-over-HTTP surface of a LabelQueue:
//   GET  /api/episodes/pending        -> [{id, task, trace}]
//   GET  /api/episodes/{id}           -> trace
//   POST /api/episodes/{id}/reward    {"value": 2|1|-1} -> {"ok": true}
//   GET  /api/status                  -> {iteration, episode, mean_reward}
// Optionally serves a static bundle from `static_dir` at "/".
class LabelServer {
 public:
  explicit LabelServer(LabelQueue& queue, std::filesystem::path static_dir = {});
  ~LabelServer();
  LabelServer(const LabelServer&) = delete;
  LabelServer& operator=(const LabelServer&) = delete;

  // Binds and serves on a background thread. Port 0 picks a free port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();
  int port() const { return port_; }
  bool running() const;

 private:
  LabelQueue& queue_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace dppt::labels
