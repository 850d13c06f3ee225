#include "dppt/label_server.hpp"

#include <httplib.h>

#include <stdexcept>

namespace dppt::labels {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, {{"ok", false}, {"error", message}}, status);
}

std::optional<std::uint64_t> parse_id(const std::string& s) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace

LabelServer::LabelServer(LabelQueue& queue, std::filesystem::path static_dir)
    : queue_(queue), server_(std::make_unique<httplib::Server>()) {
  server_->Get("/api/episodes/pending", [this](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& e : queue_.pending()) out.push_back({{"id", e.id}, {"task", e.task}, {"trace", e.trace}});
    send_json(res, out);
  });
  server_->Get(R"(/api/episodes/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
    const auto id = parse_id(req.matches[1]);
    const auto trace = id ? queue_.trace(*id) : std::nullopt;
    if (!trace) return send_error(res, 404, "unknown episode");
    send_json(res, *trace);
  });
  server_->Post(R"(/api/episodes/([^/]+)/reward)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto id = parse_id(req.matches[1]);
    if (!id) return send_error(res, 404, "unknown episode");
    double value = 0.0;
    try {
      value = json::parse(req.body).at("value").get<double>();
    } catch (const std::exception&) {
      return send_error(res, 400, "body must be {\"value\": 2|1|-1}");
    }
    switch (queue_.post_label(*id, value)) {
      case PostResult::ok: return send_json(res, {{"ok", true}});
      case PostResult::not_found: return send_error(res, 404, "unknown episode");
      case PostResult::duplicate: return send_error(res, 409, "episode already labelled");
      case PostResult::invalid_value: return send_error(res, 400, "value must be 2, 1 or -1");
      case PostResult::closed: return send_error(res, 503, "label queue closed");
    }
  });
  server_->Get("/api/status", [this](const httplib::Request&, httplib::Response& res) {
    const Status s = queue_.status();
    send_json(res, {{"iteration", s.iteration}, {"episode", s.episode}, {"mean_reward", s.mean_reward}});
  });
  if (!static_dir.empty()) {
    if (!server_->set_mount_point("/", static_dir.string())) {
      throw std::invalid_argument("static directory " + static_dir.string() + " does not exist");
    }
  }
}

LabelServer::~LabelServer() { stop(); }

int LabelServer::start(const std::string& host, int port) {
  if (thread_.joinable()) throw std::logic_error("label server already running");
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void LabelServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

bool LabelServer::running() const { return server_ && server_->is_running(); }

}  // namespace dppt::labels
