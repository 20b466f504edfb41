#pragma once

// OpenAI-compatible chat-completion client over cpp-httplib.
// Define STEMF_WITH_OPENSSL (and link OpenSSL) to enable https endpoints.

#ifdef STEMF_WITH_OPENSSL
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#endif

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <random>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "httplib.h"
#include "stemf/backend.hpp"

namespace stemf {

inline constexpr const char* kApiKeyEnv = "STEMF_API_KEY";
inline constexpr const char* kApiBaseEnv = "STEMF_API_BASE";

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{1000};
  double jitter = 0.2;  // +/- fraction applied to each delay

  /// Delay before retry number `retry` (0-based): base * 2^retry, jittered.
  std::chrono::milliseconds delay(int retry, std::mt19937_64& rng) const {
    const double nominal = static_cast<double>(base_delay.count()) * static_cast<double>(1 << retry);
    std::uniform_real_distribution<double> dist(1.0 - jitter, 1.0 + jitter);
    return std::chrono::milliseconds(static_cast<long long>(nominal * dist(rng)));
  }
};

struct HttpOptions {
  std::chrono::seconds connect_timeout{10};
  std::chrono::seconds read_timeout{600};
  RetryPolicy retry;
  /// Falls back to $STEMF_API_KEY when empty.
  std::string api_key;
};

struct ParsedEndpoint {
  std::string scheme_host_port;  // e.g. http://localhost:8000
  std::string base_path;         // e.g. /v1 (no trailing slash)
};

inline ParsedEndpoint parse_endpoint(std::string_view url) {
  const std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) {
    throw Error(ErrorCode::InvalidConfig, "endpoint must include a scheme: " + std::string(url));
  }
  const std::string_view scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw Error(ErrorCode::InvalidConfig, "unsupported endpoint scheme: " + std::string(url));
  }
  const std::size_t path_start = url.find('/', scheme_end + 3);
  ParsedEndpoint out;
  out.scheme_host_port = std::string(url.substr(0, path_start));
  if (path_start != std::string_view::npos) {
    std::string_view path = url.substr(path_start);
    while (!path.empty() && path.back() == '/') path.remove_suffix(1);
    out.base_path = std::string(path);
  }
  return out;
}

inline nlohmann::json build_request_body(const ModelRef& model, const ChatRequest& request) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", m.role}, {"content", m.content}});
  }
  return {{"model", model.model_name},
          {"messages", std::move(messages)},
          {"temperature", request.params.temperature},
          {"top_p", request.params.top_p},
          {"max_tokens", request.params.max_tokens}};
}

inline ChatResponse parse_response_body(std::string_view body, const std::string& request_id) {
  const auto doc = nlohmann::json::parse(body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw Error(ErrorCode::MalformedResponse, "response body is not a JSON object");
  }
  const auto choices = doc.find("choices");
  if (choices == doc.end() || !choices->is_array() || choices->empty() ||
      !(*choices)[0].is_object()) {
    throw Error(ErrorCode::MalformedResponse, "response has no choices");
  }
  const auto& choice = (*choices)[0];
  ChatResponse out;
  out.request_id = request_id;
  const auto message = choice.find("message");
  if (message == choice.end() || !message->is_object()) {
    throw Error(ErrorCode::MalformedResponse, "choice has no message");
  }
  const auto content = message->find("content");
  if (content != message->end() && content->is_string()) {
    out.content = content->get<std::string>();
  } else if (content != message->end() && !content->is_null()) {
    throw Error(ErrorCode::MalformedResponse, "message content is not a string");
  }
  const auto finish = choice.find("finish_reason");
  out.finish_reason = finish != choice.end() && finish->is_string() ? finish->get<std::string>()
                                                                    : std::string("stop");
  if (out.content.empty() && out.finish_reason == "stop") {
    throw Error(ErrorCode::MalformedResponse, "empty content with a normal finish reason");
  }
  if (const auto usage = doc.find("usage"); usage != doc.end() && usage->is_object()) {
    out.usage.prompt_tokens = usage->value("prompt_tokens", 0LL);
    out.usage.completion_tokens = usage->value("completion_tokens", 0LL);
    out.usage.total_tokens = usage->value("total_tokens", 0LL);
  }
  return out;
}

class HttpChatBackend final : public ChatBackend {
 public:
  explicit HttpChatBackend(HttpOptions options = {}) : options_(std::move(options)) {
    if (options_.api_key.empty()) {
      if (const char* key = std::getenv(kApiKeyEnv)) options_.api_key = key;
    }
  }

  ChatResponse complete(const ModelRef& model, const ChatRequest& request) override {
    request.validate();
    std::string endpoint = model.endpoint;
    if (endpoint.empty()) {
      if (const char* base = std::getenv(kApiBaseEnv)) endpoint = base;
    }
    if (endpoint.empty()) {
      throw Error(ErrorCode::InvalidConfig, "no endpoint for model " + model.model_name);
    }
    const ParsedEndpoint target = parse_endpoint(endpoint);
    const std::string body = build_request_body(model, request).dump(
        -1, ' ', false, nlohmann::json::error_handler_t::replace);

    std::mt19937_64 jitter_rng(std::random_device{}());
    const int attempts = std::max(1, options_.retry.max_attempts);
    for (int attempt = 0;; ++attempt) {
      try {
        return post_once(target, body, request.id);
      } catch (const Error& e) {
        const bool retryable = e.code() == ErrorCode::TransportError ||
                               e.code() == ErrorCode::Timeout ||
                               e.code() == ErrorCode::RateLimited;
        if (!retryable || attempt + 1 >= attempts) throw;
        std::this_thread::sleep_for(options_.retry.delay(attempt, jitter_rng));
      }
    }
  }

 private:
  ChatResponse post_once(const ParsedEndpoint& target, const std::string& body,
                         const std::string& request_id) const {
    httplib::Client client(target.scheme_host_port);
    if (!client.is_valid()) {
      throw Error(ErrorCode::TransportError,
                  "cannot create client for " + target.scheme_host_port);
    }
    client.set_connection_timeout(options_.connect_timeout);
    client.set_read_timeout(options_.read_timeout);
    client.set_write_timeout(options_.read_timeout);
    httplib::Headers headers = {{"X-Request-Id", request_id}};
    if (!options_.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + options_.api_key);
    }
    const auto result =
        client.Post(target.base_path + "/chat/completions", headers, body, "application/json");
    if (!result) {
      const auto err = result.error();
      const std::string what = httplib::to_string(err);
      if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) {
        throw Error(ErrorCode::Timeout, what + " (" + target.scheme_host_port + ")");
      }
      throw Error(ErrorCode::TransportError, what + " (" + target.scheme_host_port + ")");
    }
    const int status = result->status;
    if (status == 429) throw Error(ErrorCode::RateLimited, "HTTP 429");
    if (status == 408) throw Error(ErrorCode::Timeout, "HTTP 408");
    if (status >= 500) throw Error(ErrorCode::TransportError, "HTTP " + std::to_string(status));
    if (status != 200) {
      throw Error(ErrorCode::MalformedResponse,
                  "HTTP " + std::to_string(status) + ": " + result->body.substr(0, 200));
    }
    return parse_response_body(result->body, request_id);
  }

  HttpOptions options_;
};

}  // namespace stemf
