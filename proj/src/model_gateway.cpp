#include "curate/model_gateway.hpp"

#include <httplib.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "curate/featurizer.hpp"
#include "curate/hashing.hpp"
#include "curate/prompts.hpp"

namespace curate {

namespace {

constexpr std::array<std::string_view, 8> kRoleNames{"tagger",   "rewriter", "responder",   "judge",
                                                     "referee",  "embedder", "loss_scorer", "reward_scorer"};

// Vocabularies for the mock tagger and grouper. Only their determinism matters.
constexpr std::array<std::string_view, 48> kMockCapabilities{
    "arithmetic",         "algebra",          "geometry",        "probability",      "data analysis",
    "python programming", "debugging",        "sql",             "web development",  "algorithm design",
    "creative writing",   "poetry",           "storytelling",    "summarization",    "translation",
    "grammar correction", "email writing",    "persuasion",      "history",          "biology",
    "chemistry",          "physics",          "economics",       "law",              "medicine",
    "nutrition",          "travel planning",  "career advice",   "role play",        "humor",
    "ethics",             "logical reasoning", "common sense",   "classification",   "information extraction",
    "question answering", "brainstorming",    "planning",        "education",        "psychology",
    "philosophy",         "music",            "sports",          "finance",          "marketing",
    "product design",     "safety",           "casual chat"};

constexpr std::array<std::string_view, 26> kMockCategories{
    "Mathematics",     "Programming",        "Writing",          "Language",        "Science",
    "Humanities",      "Business",           "Law and Policy",   "Health",          "Lifestyle",
    "Reasoning",       "Knowledge QA",       "Creativity",       "Education",       "Analysis",
    "Planning",        "Communication",      "Entertainment",    "Technology",      "Data",
    "Ethics",          "Social Interaction", "Role Play",        "Information",     "Arts",
    "General"};

constexpr std::array<std::string_view, 8> kMockAdditions{
    "Explain each step of your reasoning.",      "Keep the answer under 200 words.",
    "Include one concrete example.",              "Compare at least two different approaches.",
    "State every assumption you make.",           "Present the key points as a table.",
    "Mention one common mistake to avoid.",       "Justify the final answer with a short check."};

std::string last_user_content(const json& request) {
  const auto& msgs = request.at("messages");
  for (auto it = msgs.rbegin(); it != msgs.rend(); ++it)
    if (it->at("role") == "user") return it->at("content").get<std::string>();
  return msgs.back().at("content").get<std::string>();
}

std::string mock_tags(std::string_view instruction, std::uint64_t seed) {
  std::map<std::size_t, std::size_t> counts;
  for (const auto& tok : tokenize(instruction)) {
    if (tok.size() < 3) continue;
    ++counts[stable_hash(tok, seed) % kMockCapabilities.size()];
  }
  if (counts.empty()) return std::string(kMockCapabilities.back());
  std::vector<std::pair<std::size_t, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](auto& a, auto& b) { return a.second > b.second; });
  std::string out;
  for (std::size_t i = 0; i < std::min<std::size_t>(3, ranked.size()); ++i) {
    if (i) out += ", ";
    out += kMockCapabilities[ranked[i].first];
  }
  return out;
}

std::string mock_grouping(std::string_view prompt, std::uint64_t seed) {
  std::size_t count = kMockCategories.size();
  if (const auto pos = prompt.find("into "); pos != std::string_view::npos) {
    std::size_t n = 0, i = pos + 5;
    while (i < prompt.size() && std::isdigit(static_cast<unsigned char>(prompt[i])) != 0)
      n = n * 10 + static_cast<std::size_t>(prompt[i++] - '0');
    if (n > 0) count = n;
  }
  const auto labels = prompts::extract_section(prompt, prompts::kLabelsMarker).value_or("");
  std::istringstream in(labels);
  std::string line, out;
  while (std::getline(in, line)) {
    line = prompts::trim(line);
    if (!line.starts_with("- ")) continue;
    const auto label = prompts::trim(std::string_view(line).substr(2));
    const auto c = stable_hash(label, seed) % count;
    const std::string category =
        c < kMockCategories.size() ? std::string(kMockCategories[c]) : "Category " + std::to_string(c + 1);
    out += label + " => " + category + "\n";
  }
  return out;
}

}  // namespace

std::string_view to_string(ModelRole role) noexcept { return kRoleNames[static_cast<std::size_t>(role)]; }

ModelRole parse_model_role(std::string_view s) {
  for (std::size_t i = 0; i < kRoleNames.size(); ++i)
    if (kRoleNames[i] == s) return static_cast<ModelRole>(i);
  throw ConfigError("unknown model role '" + std::string(s) + "'");
}

std::string_view to_string(GatewayMode mode) noexcept {
  switch (mode) {
    case GatewayMode::live: return "live";
    case GatewayMode::mock: return "mock";
    case GatewayMode::replay: return "replay";
  }
  return "mock";
}

GatewayMode parse_gateway_mode(std::string_view s) {
  if (s == "live") return GatewayMode::live;
  if (s == "mock") return GatewayMode::mock;
  if (s == "replay") return GatewayMode::replay;
  throw ConfigError("unknown gateway mode '" + std::string(s) + "'");
}

std::string_view to_string(GatewayErrorCode code) noexcept {
  switch (code) {
    case GatewayErrorCode::replay_miss: return "replay_miss";
    case GatewayErrorCode::budget_exhausted: return "budget_exhausted";
    case GatewayErrorCode::timeout: return "timeout";
    case GatewayErrorCode::http: return "http_error";
    case GatewayErrorCode::malformed_response: return "malformed_response";
    case GatewayErrorCode::invalid_request: return "invalid_request";
  }
  return "gateway_error";
}

std::string GatewayConfig::model_for(ModelRole role) const {
  const auto it = models.find(role);
  return it == models.end() || it->second.empty() ? "default" : it->second;
}

void GatewayConfig::apply_env() {
  if (const char* base = std::getenv("CURATE_API_BASE"); base != nullptr && *base != '\0') endpoint = base;
  if (const char* key = std::getenv("CURATE_API_KEY"); key != nullptr && *key != '\0') api_key = key;
}

void GatewayConfig::validate() const {
  if (mode == GatewayMode::live && endpoint.empty())
    throw ConfigError("gateway: live mode needs an endpoint (set CURATE_API_BASE)");
  if (mode == GatewayMode::replay && !call_log) throw ConfigError("gateway: replay mode needs call_log");
  if (max_inflight == 0) throw ConfigError("gateway: max_inflight must be positive");
  if (embedding_dim == 0) throw ConfigError("gateway: embedding_dim must be positive");
  if (embed_batch == 0) throw ConfigError("gateway: embed_batch must be positive");
  if (retry.max_retries < 0 || retry.multiplier < 1.0) throw ConfigError("gateway: invalid retry policy");
  if (!(timeout_seconds > 0)) throw ConfigError("gateway: timeout_seconds must be positive");
}

json GatewayConfig::to_json() const {
  json m = json::object();
  for (const auto& [role, name] : models) m[std::string(curate::to_string(role))] = name;
  json j{{"mode", curate::to_string(mode)},
         {"endpoint", endpoint},
         {"models", m},
         {"max_inflight", max_inflight},
         {"retry",
          {{"max_retries", retry.max_retries},
           {"initial_backoff_ms", retry.initial_backoff.count()},
           {"multiplier", retry.multiplier}}},
         {"call_budget", call_budget ? json(*call_budget) : json(nullptr)},
         {"timeout_seconds", timeout_seconds},
         {"embedding_dim", embedding_dim},
         {"embed_batch", embed_batch},
         {"seed", seed},
         {"call_log", call_log ? json(call_log->string()) : json(nullptr)},
         {"score_sidecar", score_sidecar ? json(score_sidecar->string()) : json(nullptr)}};
  return j;
}

GatewayConfig GatewayConfig::from_json(const json& j) {
  GatewayConfig c;
  try {
    if (j.contains("mode")) c.mode = parse_gateway_mode(j.at("mode").get<std::string>());
    c.endpoint = j.value("endpoint", c.endpoint);
    if (j.contains("models"))
      for (const auto& [role, name] : j.at("models").items()) c.models[parse_model_role(role)] = name.get<std::string>();
    c.max_inflight = j.value("max_inflight", c.max_inflight);
    if (j.contains("retry")) {
      const auto& r = j.at("retry");
      c.retry.max_retries = r.value("max_retries", c.retry.max_retries);
      c.retry.initial_backoff = std::chrono::milliseconds(r.value("initial_backoff_ms", c.retry.initial_backoff.count()));
      c.retry.multiplier = r.value("multiplier", c.retry.multiplier);
    }
    if (j.contains("call_budget") && !j.at("call_budget").is_null()) c.call_budget = j.at("call_budget").get<std::size_t>();
    c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.embed_batch = j.value("embed_batch", c.embed_batch);
    c.seed = j.value("seed", c.seed);
    if (j.contains("call_log") && !j.at("call_log").is_null()) c.call_log = j.at("call_log").get<std::string>();
    if (j.contains("score_sidecar") && !j.at("score_sidecar").is_null())
      c.score_sidecar = j.at("score_sidecar").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("gateway config: ") + e.what());
  }
  return c;
}

std::vector<ChatMessage> to_chat_messages(const InstructionRecord& record) {
  std::vector<ChatMessage> out;
  out.reserve(record.conversations.size());
  for (const auto& t : record.conversations)
    out.push_back({t.role == Role::human ? "user" : std::string(to_string(t.role)), t.content});
  return out;
}

std::string request_hash(const json& request) { return hex64(stable_hash(request.dump())); }

// ---- mock ----

std::vector<double> MockBackend::embed(std::string_view text) const {
  return hashed_ngram_embedding(text, dim_, seed_);
}

std::string MockBackend::chat(const json& request) const {
  const auto h = stable_hash(request.dump(), seed_);
  const auto role = parse_model_role(request.at("role").get<std::string>());
  const auto prompt = last_user_content(request);
  switch (role) {
    case ModelRole::tagger: {
      if (prompt.find(prompts::kLabelsMarker) != std::string::npos) return mock_grouping(prompt, seed_);
      return mock_tags(prompts::extract_section(prompt, prompts::kInstructionMarker).value_or(prompt), seed_);
    }
    case ModelRole::rewriter: {
      const auto given = prompts::extract_section(prompt, prompts::kGivenMarker, prompts::kRewrittenMarker)
                             .value_or(prompts::trim(prompt));
      if (h % 10 == 0) return given;
      return given + " " + std::string(kMockAdditions[(h >> 8) % kMockAdditions.size()]);
    }
    case ModelRole::judge: {
      const auto original = prompts::extract_section(prompt, prompts::kOriginalMarker, prompts::kCandidateMarker);
      const auto candidate = prompts::extract_section(prompt, prompts::kCandidateMarker);
      if (original && candidate && *original == *candidate) return std::string(prompts::kUnchanged);
      switch (h % 20) {
        case 0: return std::string(prompts::kHarmful);
        case 1: return std::string(prompts::kUnchanged);
        case 2: return "I cannot decide.";
        default: return std::string(prompts::kChangedSafe);
      }
    }
    case ModelRole::referee: return "Score: " + std::to_string(1 + h % 10);
    case ModelRole::responder: {
      const auto instruction = prompts::trim(prompt).substr(0, 80);
      return "Answer " + hex64(h).substr(0, 8) + ": here is a worked response to \"" + instruction + "\".";
    }
    default: return "mock " + hex64(h);
  }
}

json MockBackend::call(const json& request) {
  const auto kind = request.at("kind").get<std::string>();
  if (kind == "chat") return {{"text", chat(request)}};
  if (kind == "embed") {
    json vectors = json::array();
    for (const auto& t : request.at("input")) vectors.push_back(embed(t.get<std::string>()));
    return {{"vectors", std::move(vectors)}};
  }
  // Scores depend on the conversation only, so repeated or rephased requests agree.
  const auto content = stable_hash(request.at("record").at("conversations").dump(), seed_);
  if (kind == "loss") {
    const double before = 10.0 * to_open_unit(keyed_hash(seed_, content, 1));
    if (request.at("phase") == "before") return {{"loss", before}};
    return {{"loss", before * (0.3 + 0.7 * to_open_unit(keyed_hash(seed_, content, 2)))}};
  }
  if (kind == "reward") return {{"reward", 10.0 * to_open_unit(keyed_hash(seed_, content, 3)) - 5.0}};
  throw GatewayError(GatewayErrorCode::invalid_request, "unknown request kind '" + kind + "'");
}

// ---- replay ----

ReplayBackend::ReplayBackend(const std::filesystem::path& log) {
  std::ifstream in(log, std::ios::binary);
  if (!in) throw IoError("cannot open call log '" + log.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto j = json::parse(line);
      responses_[j.at("request_hash").get<std::string>()] = std::move(j.at("response"));
    } catch (const json::exception& e) {
      throw ParseError(line_no, std::string("call log: ") + e.what());
    }
  }
}

json ReplayBackend::call(const json& request) {
  const auto key = request_hash(request);
  const auto it = responses_.find(key);
  if (it == responses_.end()) throw GatewayError(GatewayErrorCode::replay_miss, "no recorded response for " + key);
  return it->second;
}

// ---- live ----

HttpBackend::HttpBackend(const GatewayConfig& config)
    : api_key_{config.api_key}, timeout_seconds_{config.timeout_seconds}, embedding_dim_{config.embedding_dim} {
  std::string url = config.endpoint;
  while (!url.empty() && url.back() == '/') url.pop_back();
  const auto scheme_end = url.find("://");
  const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  scheme_host_ = url.substr(0, path_start);
  if (path_start != std::string::npos) path_prefix_ = url.substr(path_start);
  if (scheme_host_.empty()) throw ConfigError("gateway: invalid endpoint '" + config.endpoint + "'");
}

json HttpBackend::post(const std::string& path, const json& body) const {
  httplib::Client client(scheme_host_);
  const auto secs = static_cast<time_t>(timeout_seconds_);
  const auto usecs = static_cast<time_t>((timeout_seconds_ - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  const auto res = client.Post(path_prefix_ + path, headers, body.dump(), "application/json");
  if (!res) {
    const auto err = res.error();
    const auto code = err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout ||
                              err == httplib::Error::Write
                          ? GatewayErrorCode::timeout
                          : GatewayErrorCode::http;
    throw GatewayError(code, path + ": " + httplib::to_string(err));
  }
  if (res->status != 200)
    throw GatewayError(GatewayErrorCode::http, path + ": status " + std::to_string(res->status));
  try {
    return json::parse(res->body);
  } catch (const json::exception& e) {
    throw GatewayError(GatewayErrorCode::malformed_response, path + ": " + e.what());
  }
}

json HttpBackend::call(const json& request) {
  const auto kind = request.at("kind").get<std::string>();
  try {
    if (kind == "chat") {
      const auto res = post("/v1/chat/completions",
                            {{"model", request.at("model")}, {"messages", request.at("messages")}, {"temperature", 0}});
      return {{"text", res.at("choices").at(0).at("message").at("content").get<std::string>()}};
    }
    if (kind == "embed") {
      const auto res = post("/v1/embeddings", {{"model", request.at("model")}, {"input", request.at("input")}});
      const auto& data = res.at("data");
      if (data.size() != request.at("input").size())
        throw GatewayError(GatewayErrorCode::malformed_response, "embedding count mismatch");
      json vectors = json::array();
      for (std::size_t i = 0; i < data.size(); ++i) vectors.push_back(nullptr);
      for (std::size_t i = 0; i < data.size(); ++i) {
        const auto idx = data[i].value("index", i);
        if (idx >= data.size()) throw GatewayError(GatewayErrorCode::malformed_response, "embedding index out of range");
        vectors[idx] = data[i].at("embedding");
      }
      return {{"vectors", std::move(vectors)}};
    }
    if (kind == "loss") {
      const auto res = post("/v1/score/loss", {{"model", request.at("model")},
                                               {"phase", request.at("phase")},
                                               {"record", request.at("record")}});
      return {{"loss", res.at("loss").get<double>()}};
    }
    if (kind == "reward") {
      const auto res =
          post("/v1/score/reward", {{"model", request.at("model")}, {"record", request.at("record")}});
      return {{"reward", res.at("reward").get<double>()}};
    }
  } catch (const json::exception& e) {
    throw GatewayError(GatewayErrorCode::malformed_response, kind + ": " + e.what());
  }
  throw GatewayError(GatewayErrorCode::invalid_request, "unknown request kind '" + kind + "'");
}

std::unique_ptr<GatewayBackend> make_backend(const GatewayConfig& config) {
  switch (config.mode) {
    case GatewayMode::mock: return std::make_unique<MockBackend>(config.seed, config.embedding_dim);
    case GatewayMode::replay: return std::make_unique<ReplayBackend>(*config.call_log);
    case GatewayMode::live: return std::make_unique<HttpBackend>(config);
  }
  throw ConfigError("gateway: unknown mode");
}

// ---- sidecar ----

std::unordered_map<std::string, SidecarScores> load_score_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open score sidecar '" + path.string() + "'");
  std::unordered_map<std::string, SidecarScores> out;
  std::string line;
  std::size_t line_no = 0;
  const auto opt = [](const json& j, const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      out[j.at("id").get<std::string>()] = {opt(j, "answer_loss"), opt(j, "post_tune_loss"), opt(j, "reward")};
    } catch (const json::exception& e) {
      throw ParseError(line_no, std::string("score sidecar: ") + e.what());
    }
  }
  return out;
}

// ---- gateway ----

ModelGateway::ModelGateway(GatewayConfig config) : ModelGateway(config, make_backend(config)) {}

ModelGateway::ModelGateway(GatewayConfig config, std::unique_ptr<GatewayBackend> backend)
    : config_{std::move(config)}, backend_{std::move(backend)}, limiter_{config_.max_inflight} {
  config_.validate();
  if (config_.score_sidecar) sidecar_ = load_score_sidecar(*config_.score_sidecar);
  if (config_.mode == GatewayMode::live && config_.call_log) {
    log_.open(*config_.call_log, std::ios::binary | std::ios::app);
    if (!log_) throw IoError("cannot open call log '" + config_.call_log->string() + "' for append");
  }
}

ModelGateway::~ModelGateway() = default;

std::optional<std::size_t> ModelGateway::budget_remaining() const noexcept {
  if (!config_.call_budget) return std::nullopt;
  const auto used = calls_.load();
  return used >= *config_.call_budget ? 0 : *config_.call_budget - used;
}

void ModelGateway::charge_budget() {
  auto used = calls_.load();
  do {
    if (config_.call_budget && used >= *config_.call_budget)
      throw GatewayError(GatewayErrorCode::budget_exhausted,
                         "call budget of " + std::to_string(*config_.call_budget) + " used up");
  } while (!calls_.compare_exchange_weak(used, used + 1));
}

void ModelGateway::record_call(const json& request, const json& response) {
  if (!log_.is_open()) return;
  const json entry{{"request_hash", request_hash(request)}, {"request", request}, {"response", response}};
  std::lock_guard lock(log_mutex_);
  log_ << entry.dump() << '\n';
  log_.flush();
}

json ModelGateway::dispatch(const json& request) {
  charge_budget();
  InflightGuard guard(limiter_);
  auto backoff = config_.retry.initial_backoff;
  for (int attempt = 0;; ++attempt) {
    try {
      auto response = backend_->call(request);
      record_call(request, response);
      return response;
    } catch (const GatewayError& e) {
      if (!e.retryable() || attempt >= config_.retry.max_retries) throw;
    } catch (const json::exception& e) {
      throw GatewayError(GatewayErrorCode::malformed_response, e.what());
    }
    std::this_thread::sleep_for(backoff);
    backoff = std::chrono::milliseconds(
        static_cast<std::chrono::milliseconds::rep>(static_cast<double>(backoff.count()) * config_.retry.multiplier));
  }
}

std::string ModelGateway::complete_chat(const std::vector<ChatMessage>& messages, ModelRole role,
                                        const std::string& model_override) {
  if (messages.empty()) throw GatewayError(GatewayErrorCode::invalid_request, "complete_chat: no messages");
  json msgs = json::array();
  for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  const json request{{"kind", "chat"},
                     {"role", to_string(role)},
                     {"model", model_override.empty() ? config_.model_for(role) : model_override},
                     {"messages", std::move(msgs)}};
  const auto response = dispatch(request);
  if (!response.contains("text") || !response.at("text").is_string())
    throw GatewayError(GatewayErrorCode::malformed_response, "chat response without text");
  return response.at("text").get<std::string>();
}

std::vector<std::vector<double>> ModelGateway::embed_texts(const std::vector<std::string>& texts) {
  if (texts.empty()) throw GatewayError(GatewayErrorCode::invalid_request, "embed_texts: no texts");
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (std::size_t begin = 0; begin < texts.size(); begin += config_.embed_batch) {
    const auto end = std::min(texts.size(), begin + config_.embed_batch);
    const json request{{"kind", "embed"},
                       {"model", config_.model_for(ModelRole::embedder)},
                       {"input", std::vector<std::string>(texts.begin() + static_cast<std::ptrdiff_t>(begin),
                                                          texts.begin() + static_cast<std::ptrdiff_t>(end))}};
    const auto response = dispatch(request);
    try {
      const auto& vectors = response.at("vectors");
      if (vectors.size() != end - begin)
        throw GatewayError(GatewayErrorCode::malformed_response, "embedding count mismatch");
      for (const auto& jv : vectors) {
        auto v = jv.get<std::vector<double>>();
        if (v.size() != config_.embedding_dim)
          throw GatewayError(GatewayErrorCode::malformed_response,
                             "embedding dimension " + std::to_string(v.size()) + ", expected " +
                                 std::to_string(config_.embedding_dim));
        double norm = 0.0;
        for (double x : v) norm += x * x;
        if (!(norm > 0.0) || !std::isfinite(norm))
          throw GatewayError(GatewayErrorCode::malformed_response, "zero or non-finite embedding");
        norm = std::sqrt(norm);
        for (double& x : v) x /= norm;
        out.push_back(std::move(v));
      }
    } catch (const json::exception& e) {
      throw GatewayError(GatewayErrorCode::malformed_response, e.what());
    }
  }
  return out;
}

namespace {

json scoring_payload(const InstructionRecord& record) {
  json turns = json::array();
  for (const auto& t : record.conversations) turns.push_back({{"from", to_string(t.role)}, {"value", t.content}});
  return {{"id", record.id}, {"conversations", std::move(turns)}};
}

double number_field(const json& response, const char* key) {
  if (!response.contains(key) || !response.at(key).is_number())
    throw GatewayError(GatewayErrorCode::malformed_response, std::string("score response without ") + key);
  const double v = response.at(key).get<double>();
  if (!std::isfinite(v)) throw GatewayError(GatewayErrorCode::malformed_response, "non-finite score");
  return v;
}

}  // namespace

double ModelGateway::score_answer_loss(const InstructionRecord& record, LossPhase phase) {
  if (const auto it = sidecar_.find(record.id); it != sidecar_.end()) {
    const auto& v = phase == LossPhase::before ? it->second.answer_loss : it->second.post_tune_loss;
    if (v) return *v;
  }
  bool has_answer = false;
  for (const auto& t : record.conversations) has_answer |= t.role == Role::assistant;
  if (!has_answer) throw GatewayError(GatewayErrorCode::invalid_request, record.id + ": no assistant answer to score");
  const json request{{"kind", "loss"},
                     {"model", config_.model_for(ModelRole::loss_scorer)},
                     {"phase", phase == LossPhase::before ? "before" : "after"},
                     {"record", scoring_payload(record)}};
  const double loss = number_field(dispatch(request), "loss");
  if (loss < 0.0) throw GatewayError(GatewayErrorCode::malformed_response, "negative loss");
  return loss;
}

double ModelGateway::score_reward(const InstructionRecord& record) {
  if (const auto it = sidecar_.find(record.id); it != sidecar_.end() && it->second.reward) return *it->second.reward;
  const json request{{"kind", "reward"},
                     {"model", config_.model_for(ModelRole::reward_scorer)},
                     {"record", scoring_payload(record)}};
  return number_field(dispatch(request), "reward");
}

}  // namespace curate
