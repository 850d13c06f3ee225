#include "dppt/label_queue.hpp"

#include <fstream>
#include <stdexcept>

#include "dppt/rewards.hpp"

namespace dppt::labels {

const char* to_string(PostResult r) {
  switch (r) {
    case PostResult::ok: return "ok";
    case PostResult::not_found: return "not_found";
    case PostResult::duplicate: return "duplicate";
    case PostResult::invalid_value: return "invalid_value";
    case PostResult::closed: return "closed";
  }
  return "unknown";
}

std::uint64_t LabelQueue::enqueue(std::string task, nlohmann::json trace) {
  std::lock_guard lock(mutex_);
  if (closed_) throw std::runtime_error("label queue is closed");
  const std::uint64_t id = next_id_++;
  entries_[id] = Entry{{id, std::move(task), std::move(trace)}, std::nullopt, false};
  order_.push_back(id);
  return id;
}

std::optional<double> LabelQueue::wait_for_label(std::uint64_t id) {
  std::unique_lock lock(mutex_);
  auto it = entries_.find(id);
  if (it == entries_.end()) throw std::out_of_range("unknown episode id " + std::to_string(id));
  const bool done = labelled_.wait_for(lock, timeout_, [&] { return closed_ || entries_.at(id).label.has_value(); });
  Entry& e = entries_.at(id);
  if (done && e.label) return e.label;
  e.expired = true;
  return std::nullopt;
}

PostResult LabelQueue::post_label(std::uint64_t id, double value) {
  {
    std::lock_guard lock(mutex_);
    if (closed_) return PostResult::closed;
    auto it = entries_.find(id);
    if (it == entries_.end()) return PostResult::not_found;
    if (it->second.label || it->second.expired) return PostResult::duplicate;
    if (!rewards::is_qualitative_value(value)) return PostResult::invalid_value;
    it->second.label = value;
    log_.push_back({id, value});
  }
  labelled_.notify_all();
  return PostResult::ok;
}

std::vector<PendingEpisode> LabelQueue::pending() const {
  std::lock_guard lock(mutex_);
  std::vector<PendingEpisode> out;
  for (std::uint64_t id : order_) {
    const Entry& e = entries_.at(id);
    if (!e.label && !e.expired) out.push_back(e.episode);
  }
  return out;
}

std::optional<nlohmann::json> LabelQueue::trace(std::uint64_t id) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(id);
  if (it == entries_.end()) return std::nullopt;
  return std::optional<nlohmann::json>(std::in_place, it->second.episode.trace);
}

std::vector<LabelEntry> LabelQueue::label_log() const {
  std::lock_guard lock(mutex_);
  return log_;
}

void LabelQueue::set_status(const Status& s) {
  std::lock_guard lock(mutex_);
  status_ = s;
}

Status LabelQueue::status() const {
  std::lock_guard lock(mutex_);
  return status_;
}

void LabelQueue::close() {
  {
    std::lock_guard lock(mutex_);
    closed_ = true;
  }
  labelled_.notify_all();
}

bool LabelQueue::closed() const {
  std::lock_guard lock(mutex_);
  return closed_;
}

void append_label(const std::filesystem::path& path, const LoggedLabel& label) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to " + path.string());
  out << nlohmann::json{{"episode", label.episode}, {"id", label.id}, {"value", label.value}}.dump() << '\n';
}

std::vector<LoggedLabel> read_label_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open label log " + path.string());
  std::vector<LoggedLabel> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out.push_back({j.at("episode").get<std::size_t>(), j.at("id").get<std::uint64_t>(), j.at("value").get<double>()});
  }
  return out;
}

}  // namespace dppt::labels
