#include "twodpo/twodpo.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "twodpo/annotation.hpp"
#include "twodpo/dataset.hpp"
#include "twodpo/error.hpp"
#include "twodpo/policy.hpp"
#include "twodpo/reward.hpp"
#include "twodpo/segmenter.hpp"
#include "twodpo/synthetic.hpp"
#include "twodpo/trainer.hpp"

using namespace twodpo;
using nlohmann::json;

struct tdpo_dataset {
  std::vector<PreferencePair> pairs;
};

struct tdpo_policy {
  PolicyParams params;
  Vocab vocab;
};

static_assert(static_cast<int>(ErrorCode::DegenerateRound) + 1 == TDPO_E_DEGENERATE_ROUND,
              "status codes must mirror ErrorCode");

namespace {

thread_local std::string g_last_error;

tdpo_status status_of(ErrorCode code) { return static_cast<tdpo_status>(static_cast<int>(code) + 1); }

template <class F>
tdpo_status wrap(F&& f) {
  try {
    f();
    g_last_error.clear();
    return TDPO_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return TDPO_E_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return TDPO_E_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) fail(ErrorCode::InvalidArgument, what);
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

TrainingConfig parse_config(const char* config_json) {
  require(config_json != nullptr, "config is null");
  json j;
  try {
    j = json::parse(config_json);
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("config is not valid JSON: ") + e.what());
  }
  return TrainingConfig::from_json(j);
}

std::vector<PreferencePair> load_data(const std::string& path, const char* field) {
  if (path.empty()) fail(ErrorCode::ConfigError, std::string("config field '") + field + "' is empty");
  try {
    auto pairs = load_dataset(path);
    if (pairs.empty()) fail(ErrorCode::DataError, "dataset '" + path + "' has no records");
    return pairs;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DataError) throw;
    fail(ErrorCode::DataError, e.what());
  }
}

json metrics_json(const MetricsRecord& r) {
  return {{"step", r.step},
          {"loss", r.loss},
          {"chosen_reward", r.chosen_reward},
          {"rejected_reward", r.rejected_reward},
          {"margin", r.margin},
          {"accuracy", r.accuracy},
          {"kl_chosen", r.kl_chosen},
          {"kl_rejected", r.kl_rejected}};
}

json training_summary(const TrainingConfig& cfg, const TrainResult& r) {
  json records = json::array();
  for (const auto& m : r.metrics) records.push_back(metrics_json(m));
  return {{"method", std::string(to_string(cfg.method))},
          {"steps", cfg.steps},
          {"kl", "sum over response positions"},
          {"first", r.metrics.empty() ? json(nullptr) : metrics_json(r.metrics.front())},
          {"final", r.metrics.empty() ? json(nullptr) : metrics_json(r.metrics.back())},
          {"records", records}};
}

void check_pair(const tdpo_policy* a, const tdpo_policy* b) {
  require(a && b, "policy is null");
  if (!(a->vocab == b->vocab) || a->params.shape() != b->params.shape())
    fail(ErrorCode::ShapeMismatch, "policy and reference differ in vocabulary or shape");
}

}  // namespace

extern "C" {

const char* tdpo_last_error(void) { return g_last_error.c_str(); }

const char* tdpo_status_name(tdpo_status status) {
  if (status == TDPO_OK) return "Ok";
  if (status == TDPO_E_INTERNAL) return "Internal";
  if (status > TDPO_OK && status < TDPO_E_INTERNAL)
    return to_string(static_cast<ErrorCode>(static_cast<int>(status) - 1)).data();
  return "Unknown";
}

void tdpo_free_string(char* s) { std::free(s); }

tdpo_status tdpo_segment_text(const char* text, char** out_json) {
  return wrap([&] {
    require(text && out_json, "null argument");
    json a = json::array();
    for (const auto& s : segment_response(text)) a.push_back({{"text", s.text}, {"sep", s.sep}});
    *out_json = dup(a.dump());
  });
}

tdpo_status tdpo_dataset_load(const char* path, tdpo_dataset** out) {
  return wrap([&] {
    require(path && out, "null argument");
    auto ds = std::make_unique<tdpo_dataset>();
    ds->pairs = load_dataset(path);
    *out = ds.release();
  });
}

void tdpo_dataset_free(tdpo_dataset* ds) { delete ds; }

size_t tdpo_dataset_size(const tdpo_dataset* ds) { return ds ? ds->pairs.size() : 0; }

tdpo_status tdpo_dataset_save(const tdpo_dataset* ds, const char* path) {
  return wrap([&] {
    require(ds && path, "null argument");
    save_dataset(path, ds->pairs);
  });
}

tdpo_status tdpo_dataset_stats(const tdpo_dataset* ds, const char* format, char** out) {
  return wrap([&] {
    require(ds && format && out, "null argument");
    const auto stats = dataset_stats(ds->pairs);
    const std::string f = format;
    if (f == "csv")
      *out = dup(stats_to_csv(stats));
    else if (f == "json")
      *out = dup(stats_to_json(stats).dump(2));
    else
      fail(ErrorCode::InvalidArgument, "stats format must be csv or json");
  });
}

tdpo_status tdpo_validate_file(const char* path, char** out_json, size_t* rejected) {
  return wrap([&] {
    require(path && out_json, "null argument");
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Io, std::string("cannot open '") + path + "'");

    struct Entry {
      std::size_t line;
      json report;
      std::size_t pair = SIZE_MAX;
    };
    std::vector<Entry> entries;
    std::vector<PreferencePair> parsed;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        parsed.push_back(parse_record_unchecked(line));
        entries.push_back({lineno, {}, parsed.size() - 1});
      } catch (const Error& e) {
        json v = json::array({{{"code", std::string(to_string(e.code()))}, {"message", e.what()}, {"location", ""}}});
        entries.push_back({lineno, {{"id", nullptr}, {"accepted", false}, {"violations", v}}});
      }
    }
    const auto reports = validate_dataset(parsed);
    json out = json::array();
    std::size_t bad = 0;
    for (auto& e : entries) {
      json r = e.report;
      if (e.pair != SIZE_MAX) {
        const auto& rep = reports[e.pair];
        json v = json::array();
        for (const auto& x : rep.violations) v.push_back({{"code", x.code}, {"message", x.message}, {"location", x.location}});
        r = {{"id", rep.record_id}, {"accepted", rep.accepted()}, {"violations", v}};
      }
      r["line"] = e.line;
      if (!r["accepted"].get<bool>()) ++bad;
      out.push_back(std::move(r));
    }
    if (rejected) *rejected = bad;
    *out_json = dup(out.dump(2));
  });
}

tdpo_status tdpo_annotate_file(const char* in_path, const char* out_path, const char* transcript_path,
                               const char* judge_json, size_t* annotated) {
  return wrap([&] {
    require(in_path && out_path, "null argument");
    json j = judge_json ? json::parse(judge_json, nullptr, false) : json::object();
    if (j.is_discarded() || !j.is_object()) fail(ErrorCode::ConfigError, "judge config must be a JSON object");

    JudgeConfig jc;
    jc.endpoint = j.value("endpoint", jc.endpoint);
    jc.model = j.value("model", jc.model);
    jc.timeout = std::chrono::milliseconds(j.value("timeout_ms", static_cast<long long>(jc.timeout.count())));
    jc.max_in_flight = j.value("max_in_flight", jc.max_in_flight);
    jc.retry_budget = j.value("retry_budget", jc.retry_budget);
    jc.api_key_env = j.value("api_key_env", jc.api_key_env);

    AnnotationOptions opts;
    if (j.contains("templates_dir")) opts.templates = PromptTemplates::load_directory(j.at("templates_dir").get<std::string>());
    opts.repair_completeness = j.value("repair_completeness", true);

    std::unique_ptr<JudgeClient> client;
    const std::string kind = j.value("kind", std::string("mock"));
    if (kind == "mock") {
      jc.model = jc.model.empty() ? "mock" : jc.model;
      client = std::make_unique<MockJudge>(j.value("seed", std::uint64_t{0}), MockJudge::Script{}, opts.templates, jc);
    } else if (kind == "http") {
      client = std::make_unique<HttpJudge>(jc);
    } else {
      fail(ErrorCode::ConfigError, "judge kind must be mock or http");
    }

    std::ifstream in(in_path);
    if (!in) fail(ErrorCode::Io, std::string("cannot open '") + in_path + "'");
    std::ofstream out(out_path);
    if (!out) fail(ErrorCode::Io, std::string("cannot write '") + out_path + "'");
    std::ofstream transcript;
    if (transcript_path) {
      transcript.open(transcript_path);
      if (!transcript) fail(ErrorCode::Io, std::string("cannot write '") + transcript_path + "'");
    }

    std::size_t count = 0;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto u = parse_unscored_record(line);
        auto res = annotate_pair(u.id, u.history, u.chosen, u.rejected, *client, opts);
        res.pair.extra = u.extra;
        out << serialize_record(res.pair) << '\n';
        if (transcript) transcript << res.transcript.to_json().dump() << '\n';
        ++count;
      } catch (const Error& e) {
        fail(e.code(), "line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    if (annotated) *annotated = count;
  });
}

tdpo_status tdpo_config_resolve(const char* config_json, char** out_json) {
  return wrap([&] {
    require(out_json != nullptr, "null argument");
    *out_json = dup(parse_config(config_json).to_json().dump(2));
  });
}

tdpo_status tdpo_sft(const char* config_json, tdpo_policy** out, char** summary_json) {
  return wrap([&] {
    require(out != nullptr, "null argument");
    const auto cfg = parse_config(config_json);
    const auto data = load_data(cfg.data, "data");
    auto p = std::make_unique<tdpo_policy>();
    p->vocab = build_vocab(data);
    const auto corpus = sft_corpus(data, p->vocab);
    auto res = sft_train(corpus, sft_config(cfg, p->vocab.size()));
    p->params = std::move(res.params);
    if (summary_json) {
      json s = {{"vocab_size", p->vocab.size()},
                {"parameters", p->params.values().size()},
                {"initial_nll", res.epoch_nll.front()},
                {"final_nll", res.epoch_nll.back()},
                {"epoch_nll", res.epoch_nll}};
      *summary_json = dup(s.dump(2));
    }
    *out = p.release();
  });
}

tdpo_status tdpo_policy_load(const char* path, tdpo_policy** out) {
  return wrap([&] {
    require(path && out, "null argument");
    auto p = std::make_unique<tdpo_policy>();
    p->params = load_checkpoint(path);
    p->vocab = Vocab::load(std::string(path) + ".vocab");
    if (p->vocab.size() != p->params.shape().vocab)
      fail(ErrorCode::DataError, "checkpoint and vocabulary sizes differ");
    *out = p.release();
  });
}

tdpo_status tdpo_policy_save(const tdpo_policy* policy, const char* path) {
  return wrap([&] {
    require(policy && path, "null argument");
    save_checkpoint(policy->params, path);
    policy->vocab.save(std::string(path) + ".vocab");
  });
}

void tdpo_policy_free(tdpo_policy* policy) { delete policy; }

size_t tdpo_policy_vocab_size(const tdpo_policy* policy) { return policy ? policy->vocab.size() : 0; }

tdpo_status tdpo_policy_sample(const tdpo_policy* policy, const char* prompt, double temperature, double top_p,
                               size_t max_tokens, unsigned long long seed, char** out) {
  return wrap([&] {
    require(policy && prompt && out, "null argument");
    *out = dup(sample(policy->params, policy->vocab, prompt, {temperature, top_p, max_tokens}, seed));
  });
}

tdpo_status tdpo_train(const char* config_json, const tdpo_policy* init, const tdpo_policy* ref,
                       tdpo_metrics_fn on_record, void* user, tdpo_policy** out, char** summary_json) {
  return wrap([&] {
    require(out != nullptr, "null argument");
    check_pair(init, ref);
    const auto cfg = parse_config(config_json);
    const auto data = load_data(cfg.data, "data");
    MetricsCallback cb;
    if (on_record) cb = [&](const MetricsRecord& r) { on_record(to_csv_row(r).c_str(), user); };
    auto res = train(cfg, data, init->vocab, init->params, clone_reference(ref->params), cb);
    if (summary_json) *summary_json = dup(training_summary(cfg, res).dump(2));
    *out = new tdpo_policy{std::move(res.params), init->vocab};
  });
}

tdpo_status tdpo_evaluate(const char* config_json, const tdpo_policy* theta, const tdpo_policy* ref,
                          char** out_json) {
  return wrap([&] {
    require(out_json != nullptr, "null argument");
    check_pair(theta, ref);
    const auto cfg = parse_config(config_json);
    const bool held_out = !cfg.eval_data.empty();
    const auto data = load_data(held_out ? cfg.eval_data : cfg.data, held_out ? "eval_data" : "data");
    const auto rep = evaluate(cfg, theta->params, clone_reference(ref->params), data, theta->vocab);
    *out_json = dup(rep.to_json().dump(2));
  });
}

tdpo_status tdpo_iterate(const char* config_json, const tdpo_policy* init, const tdpo_policy* ref,
                         const char* instructions_path, tdpo_metrics_fn on_record, void* user, tdpo_policy** out,
                         char** summary_json) {
  return wrap([&] {
    require(out != nullptr, "null argument");
    check_pair(init, ref);
    const auto cfg = parse_config(config_json);

    std::vector<std::vector<Utterance>> instructions;
    if (instructions_path) {
      std::ifstream in(instructions_path);
      if (!in) fail(ErrorCode::Io, std::string("cannot open '") + instructions_path + "'");
      std::string line;
      for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
          std::vector<Utterance> h;
          for (const auto& u : json::parse(line).at("history"))
            h.push_back({u.at("role").get<std::string>(), u.at("content").get<std::string>()});
          instructions.push_back(std::move(h));
        } catch (const json::exception& e) {
          fail(ErrorCode::DataError, "instructions line " + std::to_string(lineno) + ": " + e.what());
        }
      }
    } else {
      std::set<std::string> seen;
      for (const auto& p : load_data(cfg.data, "data"))
        if (seen.insert(render_history(p.history)).second) instructions.push_back(p.history);
    }
    if (instructions.empty()) fail(ErrorCode::DataError, "no instructions to sample from");

    SyntheticScorer scorer;
    const auto frozen = clone_reference(ref->params);
    PolicyParams params = init->params;
    json rounds = json::array();
    for (std::size_t r = 0; r < cfg.rounds; ++r) {
      auto res = iterate_round(params, frozen, {r, instructions, cfg.samples, &scorer}, cfg, init->vocab);
      const auto path = (std::filesystem::path(cfg.out_dir) / ("round" + std::to_string(r) + ".jsonl")).string();
      save_dataset(path, res.dataset);
      if (on_record)
        for (const auto& m : res.training.metrics) on_record(to_csv_row(m).c_str(), user);
      json s = training_summary(cfg, res.training);
      s.erase("records");
      s["round"] = r;
      s["pairs"] = res.dataset.size();
      s["skipped"] = res.skipped;
      s["dataset"] = path;
      rounds.push_back(std::move(s));
      params = std::move(res.training.params);
    }
    if (summary_json) *summary_json = dup(json{{"rounds", rounds}}.dump(2));
    *out = new tdpo_policy{std::move(params), init->vocab};
  });
}

tdpo_status tdpo_dpo_loss(const double* chosen, size_t n_chosen, const double* rejected, size_t n_rejected,
                          double beta, double* loss, double* grad_chosen, double* grad_rejected) {
  return wrap([&] {
    require(loss && (chosen || !n_chosen) && (rejected || !n_rejected), "null argument");
    TokenLogRatios r{{chosen, chosen + n_chosen}, {rejected, rejected + n_rejected}};
    const auto o = dpo_loss(r, beta);
    *loss = o.loss;
    if (grad_chosen) std::copy(o.grad_chosen.begin(), o.grad_chosen.end(), grad_chosen);
    if (grad_rejected) std::copy(o.grad_rejected.begin(), o.grad_rejected.end(), grad_rejected);
  });
}

tdpo_status tdpo_representative_score(const int* matrix, size_t segments, const double* weights, double* out) {
  return wrap([&] {
    require(matrix && weights && out, "null argument");
    std::vector<NormalizedRow> rows;
    for (size_t k = 0; k < segments; ++k) {
      AspectVector row{};
      std::copy_n(matrix + k * kNumAspects, kNumAspects, row.begin());
      rows.push_back(normalize_row(row));
    }
    *out = representative_score(rows, AspectWeights::from({weights, kNumAspects}));
  });
}

tdpo_status tdpo_select_segments(const double* chosen, size_t n_chosen, const double* rejected, size_t n_rejected,
                                 size_t* chosen_idx, size_t* rejected_idx, size_t* n_pairs) {
  return wrap([&] {
    require(chosen && rejected && chosen_idx && rejected_idx && n_pairs, "null argument");
    const auto sel = select_segments({chosen, n_chosen}, {rejected, n_rejected});
    for (size_t i = 0; i < sel.size(); ++i) {
      chosen_idx[i] = sel.pairs[i].chosen.segment;
      rejected_idx[i] = sel.pairs[i].rejected.segment;
    }
    *n_pairs = sel.size();
  });
}

}  // extern "C"
