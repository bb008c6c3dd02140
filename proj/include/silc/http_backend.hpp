#pragma once

#include <cstdlib>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "silc/gateway.hpp"

namespace silc {

// OpenAI-style chat-completion client. The request body is
// {"model", "messages":[{"role":"user","content": prompt}], ...decoding}
// and the reply text is choices[0].message.content.
class HttpBackend : public ChatBackend {
 public:
  explicit HttpBackend(BackendConfig config) : ChatBackend(std::move(config)) {
    const auto& url = config_.endpoint_url;
    const auto scheme_end = url.find("://");
    std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto path_start = url.find('/', host_start);
    base_ = url.substr(0, path_start == std::string::npos ? url.size() : path_start);
    path_ = path_start == std::string::npos ? "/v1/chat/completions" : url.substr(path_start);
  }

 protected:
  std::string complete_once(const std::string& prompt, const std::string&) override {
    httplib::Client client(base_);
    client.set_connection_timeout(0, config_.timeout_ms * 1000LL);
    client.set_read_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);

    httplib::Headers headers;
    if (!config_.auth_token_env_var.empty()) {
      if (const char* token = std::getenv(config_.auth_token_env_var.c_str()); token && *token)
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }

    nlohmann::json body = {{"model", config_.model_name},
                           {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
    for (auto it = config_.decoding.begin(); it != config_.decoding.end(); ++it) body[it.key()] = it.value();

    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res) {
      if (res.error() == httplib::Error::ConnectionTimeout || res.error() == httplib::Error::Read)
        throw TimeoutError("request to " + base_ + " timed out");
      throw EndpointError(0, "transport failure: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) throw EndpointError(res->status, res->body.substr(0, 200));

    nlohmann::json parsed = nlohmann::json::parse(res->body, nullptr, false);
    if (parsed.is_discarded()) throw EndpointError(res->status, "response is not valid JSON");
    try {
      return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw EndpointError(res->status, "response lacks choices[0].message.content");
    }
  }

 private:
  std::string base_;
  std::string path_;
};

}  // namespace silc
