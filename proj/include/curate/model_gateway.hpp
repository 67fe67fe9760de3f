#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "curate/corpus.hpp"
#include "curate/errors.hpp"
#include "curate/parallel.hpp"

namespace curate {

enum class ModelRole { tagger, rewriter, responder, judge, referee, embedder, loss_scorer, reward_scorer };

std::string_view to_string(ModelRole role) noexcept;
ModelRole parse_model_role(std::string_view s);  // throws ConfigError

enum class GatewayMode { live, mock, replay };

std::string_view to_string(GatewayMode mode) noexcept;
GatewayMode parse_gateway_mode(std::string_view s);  // throws ConfigError

struct RetryPolicy {
  int max_retries = 2;
  std::chrono::milliseconds initial_backoff{200};
  double multiplier = 2.0;
};

struct GatewayConfig {
  GatewayMode mode = GatewayMode::mock;
  /// Base URL such as "http://localhost:8000"; request paths start with /v1.
  std::string endpoint;
  std::string api_key;
  std::map<ModelRole, std::string> models;
  std::size_t max_inflight = 8;
  RetryPolicy retry;
  /// Maximum number of logical calls; unset means unlimited.
  std::optional<std::size_t> call_budget;
  double timeout_seconds = 60.0;
  std::size_t embedding_dim = 256;
  std::size_t embed_batch = 64;
  std::uint64_t seed = 0;
  /// Replay mode reads this log; live mode appends every successful call to it.
  std::optional<std::filesystem::path> call_log;
  /// JSONL of {id, answer_loss, post_tune_loss, reward}; its values win over any service.
  std::optional<std::filesystem::path> score_sidecar;

  [[nodiscard]] std::string model_for(ModelRole role) const;
  /// CURATE_API_BASE and CURATE_API_KEY override endpoint and key when set.
  void apply_env();
  void validate() const;

  [[nodiscard]] json to_json() const;
  static GatewayConfig from_json(const json& j);
};

enum class GatewayErrorCode { replay_miss, budget_exhausted, timeout, http, malformed_response, invalid_request };

std::string_view to_string(GatewayErrorCode code) noexcept;

class GatewayError : public Error {
 public:
  GatewayError(GatewayErrorCode code, const std::string& what)
      : Error(std::string(to_string(code)) + ": " + what), code_{code} {}
  [[nodiscard]] GatewayErrorCode code() const noexcept { return code_; }
  /// Transport failures are worth retrying; everything else is final.
  [[nodiscard]] bool retryable() const noexcept {
    return code_ == GatewayErrorCode::timeout || code_ == GatewayErrorCode::http;
  }

 private:
  GatewayErrorCode code_;
};

struct ChatMessage {
  std::string role;  // "system", "user" or "assistant"
  std::string content;
};

/// Turns a record's conversation into chat messages (human -> user).
std::vector<ChatMessage> to_chat_messages(const InstructionRecord& record);

/// A canonical request is a JSON object with a "kind" of chat, embed, loss or
/// reward. Backends answer with {"text"}, {"vectors"}, {"loss"} or {"reward"}.
class GatewayBackend {
 public:
  virtual ~GatewayBackend() = default;
  virtual json call(const json& request) = 0;
};

/// Offline backend; every response is a pure function of the request and seed.
class MockBackend : public GatewayBackend {
 public:
  MockBackend(std::uint64_t seed, std::size_t embedding_dim) : seed_{seed}, dim_{embedding_dim} {}
  json call(const json& request) override;

  [[nodiscard]] std::vector<double> embed(std::string_view text) const;

 private:
  std::string chat(const json& request) const;

  std::uint64_t seed_;
  std::size_t dim_;
};

/// Serves responses recorded in a call log; unknown requests raise replay_miss.
class ReplayBackend : public GatewayBackend {
 public:
  explicit ReplayBackend(const std::filesystem::path& log);
  json call(const json& request) override;
  [[nodiscard]] std::size_t size() const noexcept { return responses_.size(); }

 private:
  std::unordered_map<std::string, json> responses_;
};

/// OpenAI-compatible HTTP client.
class HttpBackend : public GatewayBackend {
 public:
  explicit HttpBackend(const GatewayConfig& config);
  json call(const json& request) override;

 private:
  json post(const std::string& path, const json& body) const;

  std::string scheme_host_;
  std::string path_prefix_;
  std::string api_key_;
  double timeout_seconds_;
  std::size_t embedding_dim_;
};

/// Adapter for tests and scripted runs.
class FunctionBackend : public GatewayBackend {
 public:
  explicit FunctionBackend(std::function<json(const json&)> fn) : fn_{std::move(fn)} {}
  json call(const json& request) override { return fn_(request); }

 private:
  std::function<json(const json&)> fn_;
};

/// Hex digest identifying a canonical request in the call log.
std::string request_hash(const json& request);

struct SidecarScores {
  std::optional<double> answer_loss;
  std::optional<double> post_tune_loss;
  std::optional<double> reward;
};

std::unordered_map<std::string, SidecarScores> load_score_sidecar(const std::filesystem::path& path);

enum class LossPhase { before, after };

/// Thread-safe front end: call budget, in-flight bound, retries, sidecar
/// precedence and call logging, in front of one backend.
class ModelGateway {
 public:
  explicit ModelGateway(GatewayConfig config);
  ModelGateway(GatewayConfig config, std::unique_ptr<GatewayBackend> backend);
  ~ModelGateway();

  ModelGateway(const ModelGateway&) = delete;
  ModelGateway& operator=(const ModelGateway&) = delete;

  std::string complete_chat(const std::vector<ChatMessage>& messages, ModelRole role,
                            const std::string& model_override = {});
  /// Unit-norm vectors, one per text, all of the configured dimension.
  std::vector<std::vector<double>> embed_texts(const std::vector<std::string>& texts);
  /// Token-mean negative log-likelihood of the answer turns.
  double score_answer_loss(const InstructionRecord& record, LossPhase phase);
  double score_reward(const InstructionRecord& record);

  [[nodiscard]] const GatewayConfig& config() const noexcept { return config_; }
  [[nodiscard]] std::size_t calls_made() const noexcept { return calls_.load(); }
  [[nodiscard]] std::optional<std::size_t> budget_remaining() const noexcept;
  [[nodiscard]] std::size_t peak_inflight() const { return limiter_.peak(); }

  /// Restores the call counter from a checkpoint.
  void set_calls_made(std::size_t n) noexcept { calls_ = n; }

 private:
  json dispatch(const json& request);
  void charge_budget();
  void record_call(const json& request, const json& response);

  GatewayConfig config_;
  std::unique_ptr<GatewayBackend> backend_;
  std::unordered_map<std::string, SidecarScores> sidecar_;
  InflightLimiter limiter_;
  std::atomic<std::size_t> calls_{0};
  std::mutex log_mutex_;
  std::ofstream log_;
};

/// Picks the backend for config.mode.
std::unique_ptr<GatewayBackend> make_backend(const GatewayConfig& config);

}  // namespace curate
