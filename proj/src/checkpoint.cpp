#include "dppt/checkpoint.hpp"

#include <cmath>
#include <fstream>

namespace dppt {

using nlohmann::json;

void Checkpoint::add(std::string name, Tensor tensor) {
  if (contains(name)) throw FormatError("duplicate tensor name: " + name);
  tensors_.emplace_back(std::move(name), std::move(tensor));
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& [n, _] : tensors_) {
    if (n == name) return true;
  }
  return false;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors_) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint has no tensor named '" + name + "'");
}

json Checkpoint::to_json() const {
  json doc;
  doc["format"] = kFormat;
  doc["version"] = kVersion;
  doc["kind"] = kind_;
  doc["meta"] = meta_;
  json arr = json::array();
  for (const auto& [name, t] : tensors_) {
    if (!t.all_finite()) throw FormatError("refusing to save non-finite tensor '" + name + "'");
    arr.push_back({{"name", name}, {"shape", t.shape()}, {"data", t.storage()}});
  }
  doc["tensors"] = std::move(arr);
  return doc;
}

Checkpoint Checkpoint::from_json(const json& doc) {
  if (doc.value("format", "") != kFormat) throw FormatError("not a dppt checkpoint");
  if (doc.value("version", 0) != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(doc.value("version", 0)));
  }
  Checkpoint ck(doc.value("kind", ""));
  ck.meta_ = doc.value("meta", json::object());
  for (const auto& entry : doc.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    std::vector<double> data;
    data.reserve(entry.at("data").size());
    for (const auto& v : entry.at("data")) {
      if (!v.is_number()) throw FormatError("non-numeric value in tensor " + entry.at("name").get<std::string>());
      data.push_back(v.get<double>());
    }
    ck.add(entry.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data)));
  }
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << to_json().dump();
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  return from_json(json::parse(in));
}

}  // namespace dppt
