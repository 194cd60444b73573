#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vgh/planning.hpp"

namespace vgh {

struct EndpointConfig {
  std::string base_url = "mock";  // "mock" runs an in-process loopback server
  std::string model = "sim-planner";
  double timeout_s = 30.0;
  int max_retries = 2;
  double temperature = 0.0;
  std::string api_key_env = "VGH_VLM_API_KEY";

  void validate() const;
};

struct DynamicObstacleInfo {
  int id = 0;
  Vec2 position;
  double distance = 0.0;
  Vec2 velocity;  // ground-plane velocity, m/s
};

/// Everything the query payload is built from. `space` must be consistent
/// with `status` (STUCK exactly when no primitives are offered).
struct PromptContext {
  int step = 0;
  AgentStatus status = AgentStatus::Normal;
  std::string global_goal;
  Vec2 position;
  double yaw = 0.0;
  const ActionSpace* space = nullptr;
  const Memory* memory = nullptr;  // optional
  std::vector<DynamicObstacleInfo> obstacles;
  bool social = false;
};

struct PromptBundle {
  std::string system_text;
  std::string user_text;
  std::vector<uint8_t> image_png;
};

/// Full navigation system prompt; the social extension is appended on demand.
std::string system_prompt(bool social);

/// Status-dependent guidance string embedded in the payload.
std::string action_guidance_text(AgentStatus status);

/// Status-dependent instruction line that precedes the payload.
std::string instruction_header(AgentStatus status);

/// Canonical JSON payload: sorted keys, floats rounded to 1e-3, stable
/// across runs. Throws Errc::inconsistent_context on status/space mismatch.
std::string query_payload(const PromptContext& ctx);

PromptBundle build_request(const PromptContext& ctx, const std::vector<uint8_t>& image_png);

/// Strict five-key parser: the reply must be a single JSON object with
/// exactly observation, goal_analysis, plan, thought, action. Throws
/// Errc::malformed_json, Errc::missing_key, or Errc::invalid_action.
Decision parse_response(const std::string& text, const ActionSpace& space);

std::string base64_encode(const std::vector<uint8_t>& data);

/// Deterministic OpenAI-style chat-completion stub on 127.0.0.1. Scripted
/// replies are served first-in first-out; once drained, a built-in policy
/// answers with a valid decision derived from the request's action_space.
class MockVlmServer {
 public:
  MockVlmServer();
  ~MockVlmServer();
  MockVlmServer(const MockVlmServer&) = delete;
  MockVlmServer& operator=(const MockVlmServer&) = delete;

  int port() const;
  std::string url() const;
  void enqueue(const std::string& raw_reply_content);
  int call_count() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct QueryRecord {
  int attempts = 0;
  bool fallback = false;
  std::vector<std::string> raw_replies;
};

/// HTTP chat-completion client. query() retries malformed replies with an
/// appended corrective instruction and, after exhausting retries, returns a
/// flagged recovery decision instead of failing the episode.
class VlmClient {
 public:
  explicit VlmClient(EndpointConfig cfg);
  ~VlmClient();
  VlmClient(const VlmClient&) = delete;
  VlmClient& operator=(const VlmClient&) = delete;

  Decision query(const PromptBundle& bundle, const ActionSpace& space,
                 QueryRecord* record = nullptr);

  const EndpointConfig& config() const { return cfg_; }

 private:
  std::string send_once(const PromptBundle& bundle, const std::string& corrective);

  EndpointConfig cfg_;
  std::string host_;
  int port_ = 0;
  std::unique_ptr<MockVlmServer> mock_;
};

}  // namespace vgh
