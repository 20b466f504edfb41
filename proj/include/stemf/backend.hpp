#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "stemf/core.hpp"
#include "stemf/parallel.hpp"

namespace stemf {

struct GenerationParams {
  double temperature = 1.0;
  double top_p = 0.8;
  int max_tokens = 4096;

  /// Synthesis and training-time judgment sampling.
  static GenerationParams synthesis() { return {}; }
  /// Evaluation-time judging is greedy.
  static GenerationParams evaluation() { return {0.0, 0.8, 4096}; }

  void validate() const {
    if (!(temperature >= 0.0)) throw Error(ErrorCode::InvalidConfig, "temperature must be >= 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) {
      throw Error(ErrorCode::InvalidConfig, "top_p must be in (0, 1]");
    }
    if (max_tokens <= 0) throw Error(ErrorCode::InvalidConfig, "max_tokens must be > 0");
  }

  friend bool operator==(const GenerationParams&, const GenerationParams&) = default;
};

enum class ModelRole { Auxiliary, Evaluator, Translator };

inline std::string_view to_string(ModelRole r) {
  switch (r) {
    case ModelRole::Auxiliary: return "auxiliary";
    case ModelRole::Evaluator: return "evaluator";
    case ModelRole::Translator: return "translator";
  }
  return "";
}

struct ModelRef {
  std::string endpoint;
  std::string model_name;
  ModelRole role = ModelRole::Evaluator;

  friend bool operator==(const ModelRef&, const ModelRef&) = default;
};

struct ChatMessage {
  std::string role;  // system | user | assistant
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

// Request metadata keys. Metadata never goes over the wire; it identifies the
// template and carries side-channel facts that offline mock models read.
namespace meta {
inline constexpr std::string_view kTemplate = "template";
inline constexpr std::string_view kAttempt = "attempt";
inline constexpr std::string_view kGoldLabel = "gold_label";
inline constexpr std::string_view kLanguage = "language";
inline constexpr std::string_view kArticle = "article";
inline constexpr std::string_view kSentence = "sentence";
inline constexpr std::string_view kErrorType = "error_type";
inline constexpr std::string_view kSourceText = "source_text";
}  // namespace meta

struct ChatRequest {
  /// Deterministic key of the logical request (stable across retries).
  std::string id;
  std::vector<ChatMessage> messages;
  GenerationParams params;
  std::map<std::string, std::string, std::less<>> metadata;

  static ChatRequest user(std::string id, std::string content, GenerationParams params) {
    ChatRequest r;
    r.id = std::move(id);
    r.messages.push_back({"user", std::move(content)});
    r.params = params;
    return r;
  }

  std::string meta_or(std::string_view key, std::string fallback = {}) const {
    const auto it = metadata.find(key);
    return it == metadata.end() ? fallback : it->second;
  }

  void validate() const {
    bool has_user = false;
    for (const auto& m : messages) {
      if (m.role != "system" && m.role != "user" && m.role != "assistant") {
        throw Error(ErrorCode::InvalidArgument, "unknown message role '" + m.role + "'");
      }
      has_user = has_user || m.role == "user";
    }
    if (!has_user) throw Error(ErrorCode::InvalidArgument, "request has no user message");
    params.validate();
  }
};

struct Usage {
  long long prompt_tokens = 0;
  long long completion_tokens = 0;
  long long total_tokens = 0;
};

struct ChatResponse {
  std::string content;
  std::string finish_reason = "stop";
  Usage usage;
  std::string request_id;
};

/// The model-call boundary. Implementations must be safe for concurrent calls.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatResponse complete(const ModelRef& model, const ChatRequest& request) = 0;
};

/// Adapts a callable; convenient for tests and one-off fakes.
class FunctionBackend final : public ChatBackend {
 public:
  using Fn = std::function<ChatResponse(const ModelRef&, const ChatRequest&)>;
  explicit FunctionBackend(Fn fn) : fn_(std::move(fn)) {}
  ChatResponse complete(const ModelRef& model, const ChatRequest& request) override {
    return fn_(model, request);
  }

 private:
  Fn fn_;
};

/// Counts calls and tracks peak concurrency of the wrapped backend.
class CountingBackend final : public ChatBackend {
 public:
  explicit CountingBackend(ChatBackend& inner) : inner_(inner) {}

  ChatResponse complete(const ModelRef& model, const ChatRequest& request) override {
    calls_.fetch_add(1);
    const int now = in_flight_.fetch_add(1) + 1;
    int peak = peak_.load();
    while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
    }
    struct Leave {
      std::atomic<int>& n;
      ~Leave() { n.fetch_sub(1); }
    } leave{in_flight_};
    return inner_.complete(model, request);
  }

  long long calls() const { return calls_.load(); }
  int peak_in_flight() const { return peak_.load(); }

 private:
  ChatBackend& inner_;
  std::atomic<long long> calls_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> peak_{0};
};

/// Emits one JSON line per backend call: template id, model, latency, outcome.
class LoggingBackend final : public ChatBackend {
 public:
  LoggingBackend(ChatBackend& inner, std::ostream& sink) : inner_(inner), sink_(sink) {}

  ChatResponse complete(const ModelRef& model, const ChatRequest& request) override {
    const auto start = std::chrono::steady_clock::now();
    const auto elapsed_ms = [&] {
      return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
          .count();
    };
    try {
      ChatResponse response = inner_.complete(model, request);
      log(model, request, elapsed_ms(), "ok");
      return response;
    } catch (const Error& e) {
      log(model, request, elapsed_ms(), to_string(e.code()));
      throw;
    }
  }

 private:
  void log(const ModelRef& model, const ChatRequest& request, double latency_ms,
           std::string_view outcome) {
    const nlohmann::json event = {{"event", "backend_call"},
                                  {"template", request.meta_or(meta::kTemplate)},
                                  {"model", model.model_name},
                                  {"request_id", request.id},
                                  {"latency_ms", latency_ms},
                                  {"outcome", outcome}};
    std::lock_guard lock(mu_);
    sink_ << event.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  }

  ChatBackend& inner_;
  std::ostream& sink_;
  std::mutex mu_;
};

/// Dispatches on ModelRef::role so each role can be served by its own backend.
class RoutingBackend final : public ChatBackend {
 public:
  RoutingBackend& route(ModelRole role, ChatBackend& backend) {
    routes_[role] = &backend;
    return *this;
  }

  ChatResponse complete(const ModelRef& model, const ChatRequest& request) override {
    const auto it = routes_.find(model.role);
    if (it == routes_.end()) {
      throw Error(ErrorCode::InvalidConfig,
                  "no backend configured for role " + std::string(to_string(model.role)));
    }
    return it->second->complete(model, request);
  }

 private:
  std::map<ModelRole, ChatBackend*> routes_;
};

/// Fans requests out with bounded concurrency. Results are in input order and
/// a failing request yields an error slot instead of aborting the batch.
inline std::vector<Outcome<ChatResponse>> complete_batch(ChatBackend& backend,
                                                         const ModelRef& model,
                                                         const std::vector<ChatRequest>& requests,
                                                         std::size_t max_in_flight) {
  if (max_in_flight < 1) throw Error(ErrorCode::InvalidArgument, "max_in_flight must be >= 1");
  return parallel_map<Outcome<ChatResponse>>(
      requests.size(), max_in_flight, [&](std::size_t i) -> Outcome<ChatResponse> {
        try {
          return backend.complete(model, requests[i]);
        } catch (const Error& e) {
          return e;
        } catch (const std::exception& e) {
          return Error(ErrorCode::TransportError, e.what());
        }
      });
}

}  // namespace stemf
