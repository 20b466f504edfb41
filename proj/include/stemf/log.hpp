#pragma once

#include <iostream>
#include <mutex>
#include <ostream>
#include <string_view>

#include <nlohmann/json.hpp>

namespace stemf::log {

enum class Level { Debug, Info, Warn, Error };

inline std::string_view to_string(Level l) {
  switch (l) {
    case Level::Debug: return "debug";
    case Level::Info: return "info";
    case Level::Warn: return "warn";
    case Level::Error: return "error";
  }
  return "";
}

/// Process-wide JSON-lines event sink (stderr by default).
class Sink {
 public:
  static Sink& instance() {
    static Sink sink;
    return sink;
  }

  void set_stream(std::ostream* out) {
    std::lock_guard lock(mu_);
    out_ = out;
  }
  void set_min_level(Level level) {
    std::lock_guard lock(mu_);
    min_level_ = level;
  }

  void emit(Level level, std::string_view event, nlohmann::json fields) {
    std::lock_guard lock(mu_);
    if (out_ == nullptr || level < min_level_) return;
    if (!fields.is_object()) fields = nlohmann::json::object();
    fields["level"] = to_string(level);
    fields["event"] = event;
    *out_ << fields.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  }

  std::ostream* stream() {
    std::lock_guard lock(mu_);
    return out_;
  }

 private:
  Sink() = default;
  std::mutex mu_;
  std::ostream* out_ = &std::cerr;
  Level min_level_ = Level::Info;
};

inline void info(std::string_view event, nlohmann::json fields = {}) {
  Sink::instance().emit(Level::Info, event, std::move(fields));
}
inline void warn(std::string_view event, nlohmann::json fields = {}) {
  Sink::instance().emit(Level::Warn, event, std::move(fields));
}
inline void error(std::string_view event, nlohmann::json fields = {}) {
  Sink::instance().emit(Level::Error, event, std::move(fields));
}

}  // namespace stemf::log
