#pragma once

// Chat-completions transport with a content-addressed response cache.

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <ctime>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "httplib.h"
#include "sftsel/detail/text.hpp"
#include "sftsel/error.hpp"
#include "sftsel/hash.hpp"

namespace sftsel {

struct ChatRequest {
  std::string model;
  std::string system;
  std::string user;
  double temperature = 0.0;
  std::optional<int> max_tokens;
  // Distinguishes re-asks of the same prompt after an unusable reply. Part of
  // the cache key when non-zero; never sent upstream.
  unsigned retry_tag = 0;
};

inline void validate(const ChatRequest& req) {
  if (req.model.empty()) throw ArgumentError("chat request: model is empty");
  if (req.system.empty() && req.user.empty()) throw ArgumentError("chat request: prompts are empty");
  if (!(req.temperature >= 0.0)) throw ArgumentError("chat request: temperature must be >= 0");
}

/// Sorted-key, compact JSON of everything that identifies a request.
inline std::string canonical_request(const ChatRequest& req, std::string_view endpoint) {
  nlohmann::json j = {{"endpoint", endpoint},
                      {"model", req.model},
                      {"system", req.system},
                      {"user", req.user},
                      {"temperature", req.temperature},
                      {"max_tokens", req.max_tokens ? nlohmann::json(*req.max_tokens)
                                                    : nlohmann::json(nullptr)}};
  if (req.retry_tag != 0) j["retry_tag"] = req.retry_tag;
  return j.dump();
}

inline std::string cache_key(const ChatRequest& req, std::string_view endpoint) {
  return sha256_hex(canonical_request(req, endpoint));
}

/// Append-only directory of `<key>.json` files, each holding
/// {key, request, reply, created_at}. Writes go through temp-file + rename;
/// an existing entry is never replaced.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& dir() const noexcept { return dir_; }

  std::filesystem::path path_for(const std::string& key) const { return dir_ / (key + ".json"); }

  std::optional<std::string> get(const std::string& key) const {
    const auto path = path_for(key);
    if (!std::filesystem::exists(path)) return std::nullopt;
    try {
      const auto j = nlohmann::json::parse(detail::read_file(path));
      if (j.at("key").get<std::string>() != key) return std::nullopt;
      return j.at("reply").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      return std::nullopt;
    }
  }

  void put(const std::string& key, const std::string& canonical, const std::string& reply) const {
    const auto path = path_for(key);
    if (std::filesystem::exists(path)) return;
    nlohmann::json j = {{"key", key},
                        {"request", nlohmann::json::parse(canonical)},
                        {"reply", reply},
                        {"created_at", now_iso8601()}};
    detail::write_file_atomic(path, j.dump(2) + "\n");
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir_)) {
      if (e.path().extension() == ".json") ++n;
    }
    return n;
  }

 private:
  static std::string now_iso8601() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  std::filesystem::path dir_;
};

// ---------------------------------------------------------------------------
// Transports

/// Outcome of one upstream attempt. status 0 means no HTTP response
/// (connection failure or timeout).
struct TransportResult {
  int status = 0;
  std::string reply;  // message content when status == 200
  std::string error;
};

inline bool is_transient(int status) noexcept {
  return status == 0 || status == 429 || (status >= 500 && status <= 599);
}

class Transport {
 public:
  virtual ~Transport() = default;
  virtual TransportResult send(const ChatRequest& req) = 0;
};

/// OpenAI-compatible POST {endpoint}/chat/completions.
class HttpTransport final : public Transport {
 public:
  struct Options {
    std::string endpoint = "https://api.openai.com/v1";
    std::string api_key_env = "OPENAI_API_KEY";
    std::chrono::seconds timeout{120};
  };

  explicit HttpTransport(Options opts) : opts_(std::move(opts)) {
    auto& ep = opts_.endpoint;
    while (!ep.empty() && ep.back() == '/') ep.pop_back();
    const auto scheme_end = ep.find("://");
    if (scheme_end == std::string::npos) {
      throw ConfigError("endpoint must include a scheme (http:// or https://): " + ep);
    }
    const auto path_start = ep.find('/', scheme_end + 3);
    origin_ = ep.substr(0, path_start);
    base_path_ = path_start == std::string::npos ? std::string() : ep.substr(path_start);
    if (const char* key = std::getenv(opts_.api_key_env.c_str()); key != nullptr && *key) {
      api_key_ = key;
    }
  }

  static nlohmann::json request_body(const ChatRequest& req) {
    nlohmann::json messages = nlohmann::json::array();
    if (!req.system.empty()) messages.push_back({{"role", "system"}, {"content", req.system}});
    messages.push_back({{"role", "user"}, {"content", req.user}});
    nlohmann::json body = {{"model", req.model},
                           {"messages", messages},
                           {"temperature", req.temperature},
                           {"n", 1},
                           {"stream", false}};
    if (req.max_tokens) body["max_tokens"] = *req.max_tokens;
    return body;
  }

  TransportResult send(const ChatRequest& req) override {
    httplib::Client client(origin_);
    const auto secs = static_cast<time_t>(opts_.timeout.count());
    client.set_connection_timeout(secs, 0);
    client.set_read_timeout(secs, 0);
    client.set_write_timeout(secs, 0);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    auto res = client.Post(base_path_ + "/chat/completions", headers, request_body(req).dump(),
                           "application/json");
    TransportResult out;
    if (!res) {
      out.error = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    if (res->status != 200) {
      out.error = res->body.substr(0, 512);
      return out;
    }
    try {
      const auto j = nlohmann::json::parse(res->body);
      out.reply = j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      // A 200 without a usable body is treated as a server fault.
      out.status = 502;
      out.error = std::string("malformed completion body: ") + e.what();
    }
    return out;
  }

 private:
  Options opts_;
  std::string origin_;
  std::string base_path_;
  std::string api_key_;
};

/// Replays a fixed script, one step per attempt. A step is either an HTTP
/// status (non-200 failure) or a reply string. Running past the end throws.
class ScriptedTransport final : public Transport {
 public:
  struct Step {
    int status = 200;
    std::string reply;
  };

  static Step ok(std::string reply) { return {200, std::move(reply)}; }
  static Step fail(int status) { return {status, {}}; }

  explicit ScriptedTransport(std::vector<Step> steps) : steps_(steps.begin(), steps.end()) {}

  TransportResult send(const ChatRequest& req) override {
    std::lock_guard lock(mutex_);
    seen_.push_back(req);
    if (steps_.empty()) throw ArgumentError("scripted transport: script exhausted");
    auto step = std::move(steps_.front());
    steps_.pop_front();
    TransportResult out;
    out.status = step.status;
    if (step.status == 200) out.reply = std::move(step.reply);
    else out.error = "scripted status " + std::to_string(step.status);
    return out;
  }

  std::vector<ChatRequest> requests() const {
    std::lock_guard lock(mutex_);
    return seen_;
  }

 private:
  mutable std::mutex mutex_;
  std::deque<Step> steps_;
  std::vector<ChatRequest> seen_;
};

/// Computes each reply from the request; the usual offline judge/grader mock.
class FunctionTransport final : public Transport {
 public:
  using Fn = std::function<TransportResult(const ChatRequest&)>;
  explicit FunctionTransport(Fn fn) : fn_(std::move(fn)) {}

  static std::shared_ptr<FunctionTransport> replying(
      std::function<std::string(const ChatRequest&)> reply) {
    return std::make_shared<FunctionTransport>(
        [reply = std::move(reply)](const ChatRequest& r) { return TransportResult{200, reply(r), {}}; });
  }

  TransportResult send(const ChatRequest& req) override { return fn_(req); }

 private:
  Fn fn_;
};

// ---------------------------------------------------------------------------
// Gateway

struct RetryPolicy {
  std::chrono::milliseconds base_delay{1000};
  double factor = 2.0;
  std::size_t max_attempts = 5;
};

struct GatewayOptions {
  std::string endpoint = "https://api.openai.com/v1";
  std::optional<std::filesystem::path> cache_dir;
  std::size_t max_in_flight = 4;
  RetryPolicy retry;
};

struct GatewayStats {
  std::size_t cache_hits = 0;
  std::size_t upstream_attempts = 0;
  std::size_t backoffs = 0;
  std::size_t peak_in_flight = 0;
};

/// Anything that turns a chat request into reply text.
class ChatGateway {
 public:
  virtual ~ChatGateway() = default;
  virtual std::string complete(const ChatRequest& req) = 0;
};

/// Cache-first gateway. On a miss the transport is tried up to
/// `retry.max_attempts` times, sleeping base * factor^i between attempts on
/// transient failures (timeouts, 429, 5xx); any other status fails at once.
/// Successful replies are written to the cache before being returned. With
/// no transport the gateway is cache-only and a miss is a transport error.
class Gateway final : public ChatGateway {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  Gateway(GatewayOptions opts, std::shared_ptr<Transport> transport,
          Sleeper sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })
      : opts_(std::move(opts)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {
    if (opts_.max_in_flight == 0) throw ConfigError("gateway: max_in_flight must be positive");
    if (opts_.retry.max_attempts == 0) throw ConfigError("gateway: max_attempts must be positive");
    if (opts_.cache_dir) cache_.emplace(*opts_.cache_dir);
  }

  std::string complete(const ChatRequest& req) override {
    validate(req);
    const auto canonical = canonical_request(req, opts_.endpoint);
    const auto key = sha256_hex(canonical);
    if (cache_) {
      if (auto hit = cache_->get(key)) {
        std::lock_guard lock(mutex_);
        ++stats_.cache_hits;
        return *hit;
      }
    }
    if (!transport_) throw TransportError("offline gateway: no cached reply for request " + key);

    std::string log;
    auto delay = opts_.retry.base_delay;
    for (std::size_t attempt = 1; attempt <= opts_.retry.max_attempts; ++attempt) {
      TransportResult result;
      {
        InFlight guard(*this);
        result = transport_->send(req);
      }
      if (result.status == 200) {
        if (cache_) cache_->put(key, canonical, result.reply);
        return result.reply;
      }
      log += "attempt " + std::to_string(attempt) + ": status " + std::to_string(result.status);
      if (!result.error.empty()) log += " (" + result.error + ")";
      log += "; ";
      if (!is_transient(result.status)) {
        throw PermanentError(result.status, "non-retryable upstream status: " + log);
      }
      if (attempt < opts_.retry.max_attempts) {
        {
          std::lock_guard lock(mutex_);
          ++stats_.backoffs;
        }
        sleeper_(delay);
        delay = std::chrono::milliseconds(
            static_cast<long long>(static_cast<double>(delay.count()) * opts_.retry.factor));
      }
    }
    throw TransportError("retries exhausted: " + log);
  }

  GatewayStats stats() const {
    std::lock_guard lock(mutex_);
    return stats_;
  }

  const GatewayOptions& options() const noexcept { return opts_; }

 private:
  // Blocks until an in-flight slot is free, holds it for the guard's lifetime.
  class InFlight {
   public:
    explicit InFlight(Gateway& g) : g_(g) {
      std::unique_lock lock(g_.mutex_);
      g_.slot_free_.wait(lock, [&] { return g_.in_flight_ < g_.opts_.max_in_flight; });
      ++g_.in_flight_;
      ++g_.stats_.upstream_attempts;
      g_.stats_.peak_in_flight = std::max(g_.stats_.peak_in_flight, g_.in_flight_);
    }
    ~InFlight() {
      {
        std::lock_guard lock(g_.mutex_);
        --g_.in_flight_;
      }
      g_.slot_free_.notify_one();
    }
    InFlight(const InFlight&) = delete;
    InFlight& operator=(const InFlight&) = delete;

   private:
    Gateway& g_;
  };

  GatewayOptions opts_;
  std::shared_ptr<Transport> transport_;
  Sleeper sleeper_;
  std::optional<ResponseCache> cache_;
  mutable std::mutex mutex_;
  std::condition_variable slot_free_;
  std::size_t in_flight_ = 0;
  GatewayStats stats_;
};

}  // namespace sftsel
