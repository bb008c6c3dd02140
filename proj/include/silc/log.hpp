#pragma once

#include <chrono>
#include <iostream>
#include <mutex>
#include <string>

#include <json.hpp>

namespace silc {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3 };

// JSON-lines logger writing to stderr. Shared by the CLI and the library;
// callers attach structured fields through the json payload.
class Logger {
 public:
  static Logger& instance() {
    static Logger logger;
    return logger;
  }

  void set_level(LogLevel level) { level_ = level; }
  LogLevel level() const { return level_; }

  void log(LogLevel level, const std::string& event, nlohmann::json fields = {}) {
    if (level < level_) return;
    fields["ts"] = timestamp();
    fields["level"] = level_name(level);
    fields["event"] = event;
    std::lock_guard lk(mu_);
    std::cerr << fields.dump() << "\n";
  }

  static const char* level_name(LogLevel level) {
    switch (level) {
      case LogLevel::Debug: return "debug";
      case LogLevel::Info: return "info";
      case LogLevel::Warn: return "warn";
      case LogLevel::Error: return "error";
    }
    return "info";
  }

  static LogLevel parse_level(const std::string& s) {
    if (s == "debug") return LogLevel::Debug;
    if (s == "warn") return LogLevel::Warn;
    if (s == "error") return LogLevel::Error;
    return LogLevel::Info;
  }

 private:
  static std::string timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  std::mutex mu_;
  LogLevel level_ = LogLevel::Info;
};

inline void log_info(const std::string& event, nlohmann::json fields = {}) {
  Logger::instance().log(LogLevel::Info, event, std::move(fields));
}
inline void log_warn(const std::string& event, nlohmann::json fields = {}) {
  Logger::instance().log(LogLevel::Warn, event, std::move(fields));
}
inline void log_error(const std::string& event, nlohmann::json fields = {}) {
  Logger::instance().log(LogLevel::Error, event, std::move(fields));
}

}  // namespace silc
