#include "vgh/vlm_client.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "vgh/errors.hpp"

namespace vgh {

using nlohmann::json;

void EndpointConfig::validate() const {
  if (max_retries < 0) raise(Errc::invalid_argument, "max_retries must be non-negative");
  if (timeout_s <= 0.0) raise(Errc::invalid_argument, "timeout must be positive");
}

std::string system_prompt(bool social) {
  std::string text = R"(You are an expert navigation agent embodied in a 3D world. Your mission is to reach a designated goal by creating a safe, detailed, landmark-based high-level plan and executing it step-by-step with meticulous visual reasoning.

== Core Directives ==
1. Primacy of Observation: Your primary source of truth is ALWAYS the current visual input. Your memory (previous_plan) provides strategic context, but your immediate tactical decisions MUST be based on a fresh analysis of the scene right now. Do not blindly follow old plans if the current view presents a more direct or safer path.
2. Plan with Landmarks: Your high-level plan is your map. It MUST be a sequence of clear, actionable steps anchored to tangible, visible landmarks (e.g., specific buildings, intersections, parked cars, trees). The goal itself is your primary landmark. Vague directions are unacceptable.
3. Reason Comparatively: Your thought is not a statement, but a reasoning process. You MUST explicitly compare at least two viable arrow options and justify your choice using specific visual evidence from the scene.
4. Bridge Plan and Action: Your thought is the critical link between your plan and your action. It must explain why the chosen arrow is the best possible way to execute the current first step of your plan.
5. Strict JSON Output: You MUST respond ONLY with a single, valid JSON object. No extra text or explanations.
6. CRITICAL: Ground Plan in Goal Geometry: Your plan MUST be directly and logically derived from your goal_analysis. The very first step of your plan MUST establish the initial vector towards the goal, combining forward motion with a turn or bearing (e.g., "Move forward and bear right towards the..."). A generic "move forward" plan is INVALID and unacceptable unless the goal is perfectly centered. This is the most common failure point; be precise.

== Memory Input Format ==
In steps after the first, you will receive a memory object containing:
1. previous_plan (list of strings): The full, multi-step plan from the previous turn. Treat this as contextual memory of your general intent, NOT as a strict command to be followed blindly.
2. recent_history (list of strings): A summary of recent thoughts and actions for context.

== Operational Status Protocols ==

1. NORMAL (Goal Visible)
Objective: Constantly seek the most efficient path to the goal while executing a valid plan.
Step 1: PLAN RE-ASSESSMENT:
- The Direct Path Principle: Before anything else, check your current observation. If there is now a clear, simple, and unobstructed path to the goal, you SHOULD simplify or create a new plan to take this direct route.
- If you have a previous_plan, determine if its first step is complete OR if the Direct Path Principle makes it obsolete.
- If no previous_plan exists, create a new one based on your analysis.
Step 2: PLAN UPDATING:
- If you've decided to create a new, more direct plan, formulate it now. State in your thought that you are updating the plan for efficiency.
- If the first step of the previous_plan is complete, your new plan is the remainder of the old plan.
- If the previous_plan is still the best path forward, return it unchanged.
Step 3: ACTION SELECTION: Choose the arrow that best executes the current first step of your newly assessed and updated plan.

2. GOAL_LOST (Goal Not Visible)
Objective: Rely on memory to continue the plan.
Step 1: ASSESS PROGRESS: Compare your current observation with the first step of the plan from your memory. Have you successfully completed it?
Step 2: UPDATE PLAN: If completed, your new plan is the REMAINDER of the old plan. If not, keep the plan as is.
Step 3: EXECUTE ACTION: Choose an action that executes the current first step of your updated plan (e.g., continue towards the remembered intersection).

3. STUCK (Blocked)
Objective: Reorient to find a clear path.
Plan: The first step of your plan must be to reorient (e.g., "Turn around to find a new path," "Turn left to get a better view").
Action: Choose a recovery action (e.g., turn_left, turn_right).

== JSON Output Specification ==
Your response MUST be a single JSON object with the following five keys:
1. observation (string): A brief, factual description of the current scene, noting landmarks relevant to navigation.
2. goal_analysis (string): A mandatory, precise analysis of the goal's location relative to you. Describe its direction (e.g., left, right, center), distance (e.g., near, far), and position (e.g., on a building, across the street). This analysis MUST precede and directly inform your plan.
3. plan (list of strings): A step-by-step strategy. The first step MUST be a direct consequence of the goal_analysis. Each step must be a concrete, verifiable action. The plan must be adaptable to new observations.
4. thought (string): Your immediate, comparative reasoning that connects the plan to your chosen action. Explain why the selected arrow is the best choice to accomplish the current first step of your plan by analyzing visual evidence.
5. action (integer or string): The single action chosen to execute. CRITICAL RULE: This value MUST be an exact element from the action_space list provided in the input for the current step. The data type will be an integer for forward movement (from a list like [1, 2, 3]) or a string for a recovery maneuver (from a list like ["turn_left_30", "turn_right_90"]).
)";
  if (social) {
    text += R"(
== Dynamic Obstacle Handling ==
1. Observe Obstacles: The scene may contain dynamic obstacles (e.g., humans) marked with red 'HUMAN' boxes. These are also listed in the dynamic_obstacles JSON field.
2. Assess Collision Risk: You MUST evaluate the collision risk for every action. Do not choose an arrow pointing directly at a nearby human.
3. Use "stop_and_wait": If your path is blocked by a human and no safe alternative exists, or if moving causes imminent collision, you MUST choose the "stop_and_wait" action.

== Action Selection Logic (Social) ==
- Normal/Goal_Lost: Choose the arrow that executes your plan. If all paths are blocked by a human, choose stop_and_wait.
- Stuck: If stuck due to a human, the valid recovery plan is to wait.
The observation must include any dynamic obstacles, the thought must explicitly justify safety, and the action space is extended with "stop_and_wait".
)";
  }
  return text;
}

std::string action_guidance_text(AgentStatus status) {
  switch (status) {
    case AgentStatus::Normal:
      return "The goal is marked with a green 'GOAL' box. Choose a numbered arrow that leads "
             "safely and directly towards it.";
    case AgentStatus::GoalLost:
      return "Your goal is NOT visible. Analyze your memory and the scene to deduce the best "
             "action based on your last successful plan.";
    case AgentStatus::Stuck:
      return "No forward paths are available. Choose a recovery action to reorient.";
  }
  return "";
}

std::string instruction_header(AgentStatus status) {
  if (status == AgentStatus::Normal)
    return "Process the following JSON data and the accompanying image to decide your next "
           "action.";
  return "Your goal is NOT visible. Analyze your memory and the scene to deduce the best "
         "action based on your last successful plan.";
}

namespace {

double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

}  // namespace

std::string query_payload(const PromptContext& ctx) {
  if (!ctx.space) raise(Errc::inconsistent_context, "prompt context carries no action space");
  bool stuck = ctx.status == AgentStatus::Stuck;
  if (stuck != ctx.space->primitives.empty())
    raise(Errc::inconsistent_context, "status does not match the offered action space");

  json payload;
  payload["step"] = ctx.step;
  payload["status"] = status_name(ctx.status);
  payload["global_goal"] = ctx.global_goal;
  payload["state"] = {{"position", {round3(ctx.position.x), round3(ctx.position.y)}},
                      {"orientation_yaw", round3(ctx.yaw)}};

  json actions = json::array();
  if (stuck) {
    for (const std::string& t : ctx.space->recovery) actions.push_back(t);
  } else {
    for (const ActionPrimitive& p : ctx.space->primitives) actions.push_back(p.index);
  }
  if (ctx.space->stop_and_wait) actions.push_back("stop_and_wait");
  payload["action_space"] = actions;
  payload["action_guidance"] = action_guidance_text(ctx.status);

  if (ctx.memory && !ctx.memory->empty()) {
    json mem;
    mem["previous_plan"] = ctx.memory->previous_plan;
    mem["recent_history"] = std::vector<std::string>(ctx.memory->recent_history.begin(),
                                                     ctx.memory->recent_history.end());
    payload["memory"] = mem;
  }
  if (ctx.social && ctx.status == AgentStatus::Normal && !ctx.obstacles.empty()) {
    json obstacles = json::array();
    for (const DynamicObstacleInfo& o : ctx.obstacles)
      obstacles.push_back({{"id", o.id},
                           {"position", {round3(o.position.x), round3(o.position.y)}},
                           {"distance", round3(o.distance)}});
    payload["dynamic_obstacles"] = obstacles;
  }
  return payload.dump(2);
}

PromptBundle build_request(const PromptContext& ctx, const std::vector<uint8_t>& image_png) {
  PromptBundle bundle;
  bundle.system_text = system_prompt(ctx.social);
  bundle.user_text =
      instruction_header(ctx.status) + "\n\n```json\n" + query_payload(ctx) + "\n```\n";
  bundle.image_png = image_png;
  return bundle;
}

Decision parse_response(const std::string& text, const ActionSpace& space) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception&) {
    raise(Errc::malformed_json, "reply is not a single valid JSON object");
  }
  if (!j.is_object()) raise(Errc::malformed_json, "reply is not a JSON object");

  static const char* kKeys[] = {"observation", "goal_analysis", "plan", "thought", "action"};
  for (const char* key : kKeys)
    if (!j.contains(key)) raise(Errc::missing_key, std::string("missing key: ") + key);
  if (j.size() != 5) raise(Errc::malformed_json, "reply must contain exactly the five keys");

  Decision d;
  for (const char* key : {"observation", "goal_analysis", "thought"})
    if (!j[key].is_string())
      raise(Errc::malformed_json, std::string(key) + " must be a string");
  d.observation = j["observation"].get<std::string>();
  d.goal_analysis = j["goal_analysis"].get<std::string>();
  d.thought = j["thought"].get<std::string>();

  if (!j["plan"].is_array() || j["plan"].empty())
    raise(Errc::malformed_json, "plan must be a non-empty list of strings");
  for (const auto& step : j["plan"]) {
    if (!step.is_string())
      raise(Errc::malformed_json, "plan must be a non-empty list of strings");
    d.plan.push_back(step.get<std::string>());
  }

  const json& action = j["action"];
  if (action.is_number_integer()) {
    d.action_index = action.get<int>();
    if (d.action_index <= 0)
      raise(Errc::invalid_action, "action index must be positive");
  } else if (action.is_string()) {
    d.action_token = action.get<std::string>();
  } else {
    raise(Errc::malformed_json, "action must be an integer or a string");
  }
  validate_action(space, d);
  return d;
}

std::string base64_encode(const std::vector<uint8_t>& data) {
  static const char* alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  for (size_t i = 0; i < data.size(); i += 3) {
    uint32_t chunk = static_cast<uint32_t>(data[i]) << 16;
    if (i + 1 < data.size()) chunk |= static_cast<uint32_t>(data[i + 1]) << 8;
    if (i + 2 < data.size()) chunk |= static_cast<uint32_t>(data[i + 2]);
    out.push_back(alphabet[(chunk >> 18) & 63]);
    out.push_back(alphabet[(chunk >> 12) & 63]);
    out.push_back(i + 1 < data.size() ? alphabet[(chunk >> 6) & 63] : '=');
    out.push_back(i + 2 < data.size() ? alphabet[chunk & 63] : '=');
  }
  return out;
}

namespace {

/// Pulls the fenced JSON payload out of a user prompt and answers with the
/// middle offered action (the straightest arrow, or the first recovery
/// token). Pure function of the request, so replies are deterministic under
/// any request interleaving.
std::string default_policy_reply(const std::string& user_text) {
  json decision;
  decision["observation"] = "Scripted viewer: scene received.";
  decision["goal_analysis"] = "The goal marker is assumed ahead of the agent.";
  decision["plan"] = {"Advance along the central offered direction.", "Re-evaluate next step."};
  decision["thought"] =
      "Comparing the offered actions, the central one points straightest ahead and is chosen "
      "deterministically.";

  json action = 1;
  size_t open = user_text.find("```json\n");
  size_t close = user_text.rfind("\n```");
  if (open != std::string::npos && close != std::string::npos) {
    try {
      json payload = json::parse(user_text.substr(open + 8, close - open - 8));
      const json& space = payload.at("action_space");
      if (space.is_array() && !space.empty()) action = space[(space.size() - 1) / 2];
    } catch (const json::exception&) {
    }
  }
  decision["action"] = action;
  return decision.dump();
}

}  // namespace

struct MockVlmServer::Impl {
  httplib::Server server;
  std::thread worker;
  int port = 0;
  mutable std::mutex mutex;
  std::deque<std::string> scripted;
  std::atomic<int> calls{0};
};

MockVlmServer::MockVlmServer() : impl_(std::make_unique<Impl>()) {
  impl_->server.Post("/v1/chat/completions",
                     [this](const httplib::Request& req, httplib::Response& res) {
                       impl_->calls.fetch_add(1);
                       std::string content;
                       {
                         std::lock_guard<std::mutex> lock(impl_->mutex);
                         if (!impl_->scripted.empty()) {
                           content = impl_->scripted.front();
                           impl_->scripted.pop_front();
                         }
                       }
                       if (content.empty()) {
                         std::string user_text;
                         try {
                           json body = json::parse(req.body);
                           for (const auto& msg : body.at("messages")) {
                             if (msg.at("role") != "user") continue;
                             const json& c = msg.at("content");
                             if (c.is_string()) {
                               user_text = c.get<std::string>();
                             } else if (c.is_array()) {
                               for (const auto& part : c)
                                 if (part.value("type", "") == "text")
                                   user_text = part.at("text").get<std::string>();
                             }
                             break;  // first user message carries the payload
                           }
                         } catch (const json::exception&) {
                         }
                         content = default_policy_reply(user_text);
                       }
                       json reply;
                       reply["id"] = "mock-reply";
                       reply["object"] = "chat.completion";
                       reply["model"] = "mock";
                       reply["choices"] = {{{"index", 0},
                                            {"finish_reason", "stop"},
                                            {"message",
                                             {{"role", "assistant"}, {"content", content}}}}};
                       res.set_content(reply.dump(), "application/json");
                     });
  impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
  if (impl_->port <= 0) raise(Errc::transport, "mock server could not bind a loopback port");
  impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

MockVlmServer::~MockVlmServer() {
  impl_->server.stop();
  if (impl_->worker.joinable()) impl_->worker.join();
}

int MockVlmServer::port() const { return impl_->port; }

std::string MockVlmServer::url() const {
  return "http://127.0.0.1:" + std::to_string(impl_->port);
}

void MockVlmServer::enqueue(const std::string& raw_reply_content) {
  std::lock_guard<std::mutex> lock(impl_->mutex);
  impl_->scripted.push_back(raw_reply_content);
}

int MockVlmServer::call_count() const { return impl_->calls.load(); }

VlmClient::VlmClient(EndpointConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::string url = cfg_.base_url;
  if (url == "mock" || url.empty()) {
    mock_ = std::make_unique<MockVlmServer>();
    host_ = "127.0.0.1";
    port_ = mock_->port();
    return;
  }
  const std::string prefix = "http://";
  if (url.rfind(prefix, 0) != 0)
    raise(Errc::invalid_argument,
          "endpoint must be 'mock' or an http:// URL, got: " + url);
  url = url.substr(prefix.size());
  size_t slash = url.find('/');
  if (slash != std::string::npos) url = url.substr(0, slash);
  size_t colon = url.find(':');
  if (colon == std::string::npos) {
    host_ = url;
    port_ = 80;
  } else {
    host_ = url.substr(0, colon);
    port_ = std::atoi(url.c_str() + colon + 1);
  }
  if (host_.empty() || port_ <= 0)
    raise(Errc::invalid_argument, "endpoint URL has no usable host/port: " + cfg_.base_url);
}

VlmClient::~VlmClient() = default;

std::string VlmClient::send_once(const PromptBundle& bundle, const std::string& corrective) {
  httplib::Client client(host_, port_);
  client.set_connection_timeout(static_cast<time_t>(cfg_.timeout_s),
                                static_cast<time_t>(cfg_.timeout_s * 1e6) % 1000000);
  client.set_read_timeout(static_cast<time_t>(cfg_.timeout_s), 0);
  client.set_write_timeout(static_cast<time_t>(cfg_.timeout_s), 0);

  json user_content = json::array();
  user_content.push_back({{"type", "text"}, {"text", bundle.user_text}});
  if (!bundle.image_png.empty())
    user_content.push_back(
        {{"type", "image_url"},
         {"image_url", {{"url", "data:image/png;base64," + base64_encode(bundle.image_png)}}}});

  json body;
  body["model"] = cfg_.model;
  body["temperature"] = cfg_.temperature;
  body["messages"] = json::array();
  body["messages"].push_back({{"role", "system"}, {"content", bundle.system_text}});
  body["messages"].push_back({{"role", "user"}, {"content", user_content}});
  if (!corrective.empty())
    body["messages"].push_back({{"role", "user"}, {"content", corrective}});

  httplib::Headers headers;
  const char* key = cfg_.api_key_env.empty() ? nullptr : std::getenv(cfg_.api_key_env.c_str());
  if (key && *key) headers.emplace("Authorization", std::string("Bearer ") + key);

  auto res = client.Post("/v1/chat/completions", headers, body.dump(), "application/json");
  if (!res) raise(Errc::transport, "request failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    raise(Errc::transport, "endpoint returned HTTP " + std::to_string(res->status));
  try {
    json reply = json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception&) {
    raise(Errc::transport, "endpoint reply is not a chat completion");
  }
}

namespace {

/// One lenient fallback before a retry burns: models sometimes wrap the JSON
/// object in prose, so extract the first balanced {...} block.
std::string first_balanced_object(const std::string& text) {
  size_t start = text.find('{');
  if (start == std::string::npos) return "";
  int depth = 0;
  bool in_string = false;
  for (size_t i = start; i < text.size(); ++i) {
    char c = text[i];
    if (in_string) {
      if (c == '\\')
        ++i;
      else if (c == '"')
        in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    if (c == '{') ++depth;
    if (c == '}' && --depth == 0) return text.substr(start, i - start + 1);
  }
  return "";
}

}  // namespace

Decision VlmClient::query(const PromptBundle& bundle, const ActionSpace& space,
                          QueryRecord* record) {
  std::string corrective;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (record) record->attempts = attempt + 1;
    std::string content;
    std::string problem;
    try {
      content = send_once(bundle, corrective);
      if (record) record->raw_replies.push_back(content);
      try {
        return parse_response(content, space);
      } catch (const Error& e) {
        if (e.code() == Errc::malformed_json) {
          std::string block = first_balanced_object(content);
          if (!block.empty()) return parse_response(block, space);
        }
        throw;
      }
    } catch (const Error& e) {
      problem = e.what();
    }
    corrective = "Your previous reply could not be used (" + problem +
                 "). Respond ONLY with a single valid JSON object containing exactly the keys "
                 "observation, goal_analysis, plan, thought, action. The action value MUST be "
                 "an exact element of the provided action_space.";
  }

  Decision fallback;
  fallback.observation = "Planner reply unavailable after retries.";
  fallback.goal_analysis = "No usable analysis was produced this step.";
  fallback.plan = {"Turn slightly left to gather a new view.", "Reassess on the next step."};
  fallback.thought = "All attempts failed validation, so a fixed recovery turn is taken.";
  fallback.action_token = "turn_left_30";
  fallback.fallback = true;
  if (record) record->fallback = true;
  return fallback;
}

}  // namespace vgh
