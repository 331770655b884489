#include <cstdlib>

#include <httplib.h>

#include "twodpo/annotation.hpp"
#include "twodpo/error.hpp"

namespace twodpo {

using nlohmann::json;

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const std::size_t scheme = url.find("://");
  if (scheme == std::string::npos) fail(ErrorCode::ConfigError, "judge endpoint needs a scheme: " + url);
  const std::size_t slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/v1/chat/completions"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

HttpJudge::HttpJudge(JudgeConfig config) : JudgeClient(std::move(config)) {
  if (this->config().endpoint.empty()) fail(ErrorCode::ConfigError, "judge endpoint is empty");
  split_endpoint(this->config().endpoint);
}

std::string HttpJudge::complete(const std::string& prompt) {
  const JudgeConfig& cfg = config();
  const Endpoint ep = split_endpoint(cfg.endpoint);

  httplib::Client cli(ep.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg.timeout - secs);
  cli.set_connection_timeout(secs.count(), usecs.count());
  cli.set_read_timeout(secs.count(), usecs.count());
  cli.set_write_timeout(secs.count(), usecs.count());

  httplib::Headers headers;
  if (!cfg.api_key_env.empty()) {
    if (const char* key = std::getenv(cfg.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const json body = {{"model", cfg.model},
                     {"temperature", 0},
                     {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};

  auto res = cli.Post(ep.path, headers, body.dump(), "application/json");
  if (!res) {
    fail(ErrorCode::JudgeUnavailable, "judge request failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    fail(ErrorCode::JudgeUnavailable, "judge returned HTTP " + std::to_string(res->status));
  }
  try {
    const json reply = json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::JudgeUnavailable, std::string("judge reply is not a chat completion: ") + e.what());
  }
}

}  // namespace twodpo
