#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"

namespace moerl {

using Json = nlohmann::ordered_json;

// Append-only JSONL event log. Every event carries a "frame" field; frames are
// non-decreasing in write order. Writes are serialized and flushed per line so
// a crashed run keeps everything written before the fault.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::filesystem::path& path) : out_(path, std::ios::out | std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot open metrics file " + path.string());
  }

  void write(const std::string& event, long long frame, Json fields = Json::object()) {
    std::lock_guard lock(mu_);
    if (frame < last_frame_) throw std::logic_error("metrics frames must be non-decreasing");
    last_frame_ = frame;
    Json j;
    j["event"] = event;
    j["frame"] = frame;
    for (auto& [k, v] : fields.items()) j[k] = v;
    const std::string line = j.dump();
    lines_.push_back(line);
    if (out_.is_open()) {
      out_ << line << '\n';
      out_.flush();
    }
  }

  const std::vector<std::string>& lines() const { return lines_; }

  std::vector<Json> events(const std::string& kind = "") const {
    std::vector<Json> out;
    for (const auto& l : lines_) {
      Json j = Json::parse(l);
      if (kind.empty() || j["event"] == kind) out.push_back(std::move(j));
    }
    return out;
  }

 private:
  std::mutex mu_;
  std::ofstream out_;
  std::vector<std::string> lines_;
  long long last_frame_ = 0;
};

inline std::vector<Json> read_jsonl(const std::filesystem::path& path, const std::string& kind = "") {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<Json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json j = Json::parse(line);
    if (kind.empty() || j.value("event", "") == kind) out.push_back(std::move(j));
  }
  return out;
}

}  // namespace moerl
