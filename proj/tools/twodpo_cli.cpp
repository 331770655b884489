#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "twodpo/twodpo.h"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Failure {
  tdpo_status status;
};

void check(tdpo_status s) {
  if (s != TDPO_OK) throw Failure{s};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  tdpo_free_string(s);
  return out;
}

struct Policy {
  tdpo_policy* p = nullptr;
  Policy() = default;
  Policy(const Policy&) = delete;
  Policy& operator=(const Policy&) = delete;
  ~Policy() { tdpo_policy_free(p); }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (text.empty() || text.back() != '\n') out << '\n';
}

// Training-config handling shared by sft/train/evaluate/iterate: an optional
// JSON config file, then one flag per field.
struct ConfigOptions {
  std::string file;
  std::map<std::string, std::string> scalars;
  std::vector<double> weights;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "JSON config file");
    char* defaults = nullptr;
    check(tdpo_config_resolve("{}", &defaults));
    const json d = json::parse(take(defaults));
    for (auto it = d.begin(); it != d.end(); ++it) {
      if (it.key() == "weights") {
        app->add_option("--weights", weights, "five aspect weights")->expected(5);
        continue;
      }
      app->add_option("--" + it.key(), scalars[it.key()], "default: " + it.value().dump());
    }
  }

  json resolve() const {
    json j = file.empty() ? json::object() : json::parse(read_file(file));
    for (const auto& [key, value] : scalars) {
      if (value.empty()) continue;
      json parsed = json::parse(value, nullptr, false);
      j[key] = parsed.is_discarded() || parsed.is_string() || parsed.is_object() || parsed.is_array()
                   ? json(value)
                   : parsed;
    }
    if (!weights.empty()) j["weights"] = weights;
    char* out = nullptr;
    check(tdpo_config_resolve(j.dump().c_str(), &out));
    return json::parse(take(out));
  }
};

fs::path out_dir(const json& cfg) {
  fs::path d = cfg.at("out_dir").get<std::string>();
  fs::create_directories(d);
  return d;
}

void write_resolved(const json& cfg) { write_file(out_dir(cfg) / "resolved_config.json", cfg.dump(2)); }

void load_policy(const std::string& path, Policy& p) { check(tdpo_policy_load(path.c_str(), &p.p)); }

struct MetricsLog {
  std::ofstream out;
  explicit MetricsLog(const fs::path& path) : out(path, std::ios::app) {
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    if (fs::file_size(path) == 0) out << "step,loss,chosen_reward,rejected_reward,margin,accuracy,kl_chosen,kl_rejected\n";
  }
  static void record(const char* row, void* self) {
    auto& log = *static_cast<MetricsLog*>(self);
    log.out << row << '\n';
    log.out.flush();
  }
};

// Uses cfg.checkpoint when set; otherwise runs SFT on cfg.data and saves it
// under out_dir/sft.ckpt.
void sft_or_load(const json& cfg, Policy& p) {
  const auto ckpt = cfg.at("checkpoint").get<std::string>();
  if (!ckpt.empty()) {
    load_policy(ckpt, p);
    return;
  }
  char* summary = nullptr;
  check(tdpo_sft(cfg.dump().c_str(), &p.p, &summary));
  std::cerr << "sft: " << json::parse(take(summary)).at("final_nll").get<double>() << " final NLL\n";
  const auto path = (out_dir(cfg) / "sft.ckpt").string();
  check(tdpo_policy_save(p.p, path.c_str()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segment-level preference optimization toolkit"};
  app.require_subcommand(1);

  std::string text, input, output, transcript, format = "csv";
  auto* segment = app.add_subcommand("segment", "split a response into segments (JSON)");
  segment->add_option("--text", text, "response text");
  segment->add_option("--input", input, "file holding the response text (default: stdin)");

  std::string judge_kind = "mock", endpoint, model, api_key_env = "TWODPO_JUDGE_API_KEY", templates;
  std::uint64_t judge_seed = 0;
  long long timeout_ms = 60000;
  std::size_t max_in_flight = 5, retry_budget = 2;
  bool no_repair = false;
  auto* annotate = app.add_subcommand("annotate", "score un-annotated pairs with a judge");
  annotate->add_option("--input", input, "JSONL of unscored pairs")->required();
  annotate->add_option("--output", output, "annotated JSONL")->required();
  annotate->add_option("--transcript", transcript, "JSONL of raw judge replies");
  annotate->add_option("--judge", judge_kind, "mock or http")->check(CLI::IsMember({"mock", "http"}));
  annotate->add_option("--seed", judge_seed, "mock judge seed");
  annotate->add_option("--endpoint", endpoint, "chat-completions URL");
  annotate->add_option("--model", model, "judge model name");
  annotate->add_option("--timeout_ms", timeout_ms, "per-request timeout");
  annotate->add_option("--max_in_flight", max_in_flight, "concurrent judge requests");
  annotate->add_option("--retry_budget", retry_budget, "retries per aspect");
  annotate->add_option("--api_key_env", api_key_env, "environment variable holding the API key");
  annotate->add_option("--templates", templates, "directory of prompt templates");
  annotate->add_flag("--no_repair", no_repair, "reject decreasing Completeness instead of repairing");

  auto* validate = app.add_subcommand("validate", "check every record of a dataset");
  validate->add_option("--input", input, "JSONL dataset")->required();

  auto* stats = app.add_subcommand("stats", "score distributions of a dataset");
  stats->add_option("--input", input, "JSONL dataset")->required();
  stats->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  stats->add_option("--output", output, "output file (default: stdout)");

  ConfigOptions sft_cfg, train_cfg, eval_cfg, iter_cfg;
  std::string init, ref, policy, instructions;

  auto* sft = app.add_subcommand("sft", "supervised fine-tuning on chosen responses");
  sft_cfg.attach(sft);
  sft->add_option("--output", output, "checkpoint path (default: <out_dir>/sft.ckpt)");

  auto* train = app.add_subcommand("train", "preference optimization");
  train_cfg.attach(train);
  train->add_option("--init", init, "starting checkpoint (default: checkpoint, else fresh SFT)");
  train->add_option("--ref", ref, "reference checkpoint (default: the starting policy)");

  auto* evaluate = app.add_subcommand("evaluate", "implicit rewards, accuracy and KL of a policy");
  eval_cfg.attach(evaluate);
  evaluate->add_option("--policy", policy, "trained checkpoint")->required();
  evaluate->add_option("--ref", ref, "reference checkpoint (default: checkpoint)");
  evaluate->add_option("--output", output, "report path (default: <out_dir>/evaluation.json)");

  auto* iterate = app.add_subcommand("iterate", "sample, score, pair and retrain for several rounds");
  iter_cfg.attach(iterate);
  iterate->add_option("--init", init, "starting checkpoint (default: checkpoint)");
  iterate->add_option("--ref", ref, "reference checkpoint (default: checkpoint)");
  iterate->add_option("--instructions", instructions, "JSONL of {\"history\": [...]}");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*segment) {
      if (text.empty())
        text = input.empty() ? std::string(std::istreambuf_iterator<char>(std::cin), {}) : read_file(input);
      char* out = nullptr;
      check(tdpo_segment_text(text.c_str(), &out));
      std::cout << json::parse(take(out)).dump(2) << '\n';
    } else if (*annotate) {
      json j = {{"kind", judge_kind},   {"seed", judge_seed},        {"endpoint", endpoint},
                {"model", model},       {"timeout_ms", timeout_ms},  {"max_in_flight", max_in_flight},
                {"retry_budget", retry_budget}, {"api_key_env", api_key_env}, {"repair_completeness", !no_repair}};
      if (!templates.empty()) j["templates_dir"] = templates;
      std::size_t n = 0;
      check(tdpo_annotate_file(input.c_str(), output.c_str(), transcript.empty() ? nullptr : transcript.c_str(),
                               j.dump().c_str(), &n));
      std::cerr << "annotated " << n << " pairs\n";
    } else if (*validate) {
      char* out = nullptr;
      std::size_t rejected = 0;
      check(tdpo_validate_file(input.c_str(), &out, &rejected));
      std::cout << take(out) << '\n';
      std::cerr << rejected << " record(s) rejected\n";
      return rejected == 0 ? 0 : 1;
    } else if (*stats) {
      tdpo_dataset* ds = nullptr;
      check(tdpo_dataset_load(input.c_str(), &ds));
      char* out = nullptr;
      const tdpo_status s = tdpo_dataset_stats(ds, format.c_str(), &out);
      tdpo_dataset_free(ds);
      check(s);
      if (output.empty())
        std::cout << take(out);
      else
        write_file(output, take(out));
    } else if (*sft) {
      json cfg = sft_cfg.resolve();
      write_resolved(cfg);
      Policy p;
      char* summary = nullptr;
      check(tdpo_sft(cfg.dump().c_str(), &p.p, &summary));
      const auto path = output.empty() ? (out_dir(cfg) / "sft.ckpt").string() : output;
      check(tdpo_policy_save(p.p, path.c_str()));
      write_file(out_dir(cfg) / "sft_summary.json", take(summary));
      std::cerr << "wrote " << path << '\n';
    } else if (*train) {
      json cfg = train_cfg.resolve();
      write_resolved(cfg);
      Policy start, reference, trained;
      if (!init.empty())
        load_policy(init, start);
      else
        sft_or_load(cfg, start);
      if (!ref.empty()) load_policy(ref, reference);
      MetricsLog log(out_dir(cfg) / "metrics.csv");
      char* summary = nullptr;
      check(tdpo_train(cfg.dump().c_str(), start.p, ref.empty() ? start.p : reference.p, &MetricsLog::record, &log,
                       &trained.p, &summary));
      const auto path = (out_dir(cfg) / "policy.ckpt").string();
      check(tdpo_policy_save(trained.p, path.c_str()));
      const json s = json::parse(take(summary));
      write_file(out_dir(cfg) / "summary.json", s.dump(2));
      std::cout << s.at("final").dump() << '\n';
    } else if (*evaluate) {
      json cfg = eval_cfg.resolve();
      Policy theta, reference;
      load_policy(policy, theta);
      const auto ref_path = ref.empty() ? cfg.at("checkpoint").get<std::string>() : ref;
      if (ref_path.empty()) throw std::runtime_error("evaluate needs --ref or checkpoint");
      load_policy(ref_path, reference);
      char* out = nullptr;
      check(tdpo_evaluate(cfg.dump().c_str(), theta.p, reference.p, &out));
      json rep = json::parse(take(out));
      write_file(output.empty() ? out_dir(cfg) / "evaluation.json" : fs::path(output), rep.dump(2));
      std::cout << json{{"accuracy", rep["accuracy"]},
                        {"mean_margin", rep["mean_margin"]},
                        {"mean_kl_chosen", rep["mean_kl_chosen"]},
                        {"mean_kl_rejected", rep["mean_kl_rejected"]},
                        {"spearman", rep["spearman"]}}
                       .dump()
                << '\n';
    } else if (*iterate) {
      json cfg = iter_cfg.resolve();
      write_resolved(cfg);
      Policy start, reference, trained;
      if (!init.empty())
        load_policy(init, start);
      else
        sft_or_load(cfg, start);
      const auto ref_path = ref.empty() ? cfg.at("checkpoint").get<std::string>() : ref;
      if (!ref_path.empty()) load_policy(ref_path, reference);
      MetricsLog log(out_dir(cfg) / "metrics.csv");
      char* summary = nullptr;
      check(tdpo_iterate(cfg.dump().c_str(), start.p, ref_path.empty() ? start.p : reference.p,
                         instructions.empty() ? nullptr : instructions.c_str(), &MetricsLog::record, &log,
                         &trained.p, &summary));
      const auto path = (out_dir(cfg) / "policy.ckpt").string();
      check(tdpo_policy_save(trained.p, path.c_str()));
      const std::string s = take(summary);
      write_file(out_dir(cfg) / "summary.json", s);
      std::cout << s << '\n';
    }
  } catch (const Failure& f) {
    std::cerr << "error: " << tdpo_status_name(f.status) << ": " << tdpo_last_error() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
