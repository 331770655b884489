#include "twodpo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "twodpo/annotation.hpp"
#include "twodpo/error.hpp"
#include "twodpo/optimizer.hpp"
#include "twodpo/segmenter.hpp"

namespace twodpo {

using nlohmann::json;

std::string_view to_string(Method m) noexcept {
  switch (m) {
    case Method::Dpo: return "dpo";
    case Method::OneD: return "one_d_dpo";
    case Method::TwoD: return "two_d_dpo";
    case Method::TwoDGrouped: return "two_d_dpo_grouped";
  }
  return "?";
}

Method method_from_string(std::string_view s) {
  for (Method m : {Method::Dpo, Method::OneD, Method::TwoD, Method::TwoDGrouped})
    if (to_string(m) == s) return m;
  fail(ErrorCode::ConfigError,
       "method must be dpo|one_d_dpo|two_d_dpo|two_d_dpo_grouped, got '" + std::string(s) + "'");
}

AspectWeights TrainingConfig::effective_weights() const {
  if (method == Method::OneD) return AspectWeights::helpfulness_only();
  try {
    return AspectWeights(weights);
  } catch (const Error& e) {
    fail(ErrorCode::ConfigError, e.what());
  }
}

void TrainingConfig::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) fail(ErrorCode::ConfigError, msg);
  };
  require(beta_target > 0 && std::isfinite(beta_target), "beta_target must be > 0");
  require(sft_coeff >= 0 && std::isfinite(sft_coeff), "sft_coeff must be >= 0");
  require(steps > 0, "steps must be > 0");
  require(batch_size > 0, "batch_size must be > 0");
  require(grad_accum > 0, "grad_accum must be > 0");
  require(learning_rate > 0, "learning_rate must be > 0");
  require(log_interval > 0, "log_interval must be > 0");
  require(dim > 0 && hidden > 0 && context > 0, "dim, hidden and context must be > 0");
  require(sft_batch_size > 0, "sft_batch_size must be > 0");
  require(sft_learning_rate > 0, "sft_learning_rate must be > 0");
  require(temperature > 0, "temperature must be > 0");
  require(top_p > 0 && top_p <= 1, "top_p must be in (0, 1]");
  require(samples >= 2, "samples must be >= 2");
  require(max_tokens > 0, "max_tokens must be > 0");
  require(rounds > 0, "rounds must be > 0");
  (void)effective_weights();
}

json TrainingConfig::to_json() const {
  return {
      {"method", std::string(to_string(method))},
      {"beta_target", beta_target},
      {"sft_coeff", sft_coeff},
      {"weights", weights},
      {"rejected_mode", std::string(to_string(rejected_mode))},
      {"steps", steps},
      {"batch_size", batch_size},
      {"grad_accum", grad_accum},
      {"seed", seed},
      {"learning_rate", learning_rate},
      {"log_interval", log_interval},
      {"dim", dim},
      {"hidden", hidden},
      {"context", context},
      {"sft_epochs", sft_epochs},
      {"sft_batch_size", sft_batch_size},
      {"sft_learning_rate", sft_learning_rate},
      {"temperature", temperature},
      {"top_p", top_p},
      {"samples", samples},
      {"max_tokens", max_tokens},
      {"rounds", rounds},
      {"data", data},
      {"eval_data", eval_data},
      {"checkpoint", checkpoint},
      {"out_dir", out_dir},
  };
}

TrainingConfig TrainingConfig::from_json(const json& j) {
  if (!j.is_object()) fail(ErrorCode::ConfigError, "config must be a JSON object");
  TrainingConfig c;
  const json known = c.to_json();
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key())) fail(ErrorCode::ConfigError, "unknown config field '" + it.key() + "'");
  try {
    auto field = [&](const char* key, auto& dst) {
      if (j.contains(key)) j.at(key).get_to(dst);
    };
    if (j.contains("method")) c.method = method_from_string(j.at("method").get<std::string>());
    if (j.contains("rejected_mode")) {
      try {
        c.rejected_mode = rejected_mode_from_string(j.at("rejected_mode").get<std::string>());
      } catch (const Error& e) {
        fail(ErrorCode::ConfigError, e.what());
      }
    }
    if (j.contains("weights")) {
      const auto w = j.at("weights").get<std::vector<double>>();
      if (w.size() != kNumAspects) fail(ErrorCode::ConfigError, "weights must have 5 entries");
      std::copy(w.begin(), w.end(), c.weights.begin());
    }
    field("beta_target", c.beta_target);
    field("sft_coeff", c.sft_coeff);
    field("steps", c.steps);
    field("batch_size", c.batch_size);
    field("grad_accum", c.grad_accum);
    field("seed", c.seed);
    field("learning_rate", c.learning_rate);
    field("log_interval", c.log_interval);
    field("dim", c.dim);
    field("hidden", c.hidden);
    field("context", c.context);
    field("sft_epochs", c.sft_epochs);
    field("sft_batch_size", c.sft_batch_size);
    field("sft_learning_rate", c.sft_learning_rate);
    field("temperature", c.temperature);
    field("top_p", c.top_p);
    field("samples", c.samples);
    field("max_tokens", c.max_tokens);
    field("rounds", c.rounds);
    field("data", c.data);
    field("eval_data", c.eval_data);
    field("checkpoint", c.checkpoint);
    field("out_dir", c.out_dir);
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

TrainingConfig TrainingConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigError, "config '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

std::string prompt_text(const std::vector<Utterance>& history) { return render_history(history) + "\n"; }

Vocab build_vocab(const std::vector<PreferencePair>& pairs) {
  std::vector<std::string> corpus;
  corpus.reserve(pairs.size() * 3);
  for (const auto& p : pairs) {
    corpus.push_back(prompt_text(p.history));
    corpus.push_back(p.chosen.text());
    corpus.push_back(p.rejected.text());
  }
  return Vocab::build(corpus);
}

std::vector<SftExample> sft_corpus(const std::vector<PreferencePair>& pairs, const Vocab& vocab) {
  std::vector<SftExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({vocab.encode(prompt_text(p.history)), vocab.encode(p.chosen.text())});
  return out;
}

SftConfig sft_config(const TrainingConfig& cfg, std::size_t vocab_size) {
  SftConfig s;
  s.shape = {vocab_size, cfg.dim, cfg.context, cfg.hidden};
  s.epochs = cfg.sft_epochs;
  s.batch_size = cfg.sft_batch_size;
  s.learning_rate = cfg.sft_learning_rate;
  s.seed = cfg.seed;
  return s;
}

namespace {

PreparedResponse prepare_response(const AnnotatedResponse& r, const Vocab& vocab, const AspectWeights& w) {
  const auto pieces = vocab.tokenize(r.text());
  const auto al = align_segments(r.segments, pieces);
  const auto seg_rewards = segment_rewards(r.scores, w);
  PreparedResponse out;
  out.ids.reserve(pieces.size());
  for (const auto& p : pieces) out.ids.push_back(*vocab.find(p.text));
  out.spans = al.spans;
  out.segment_of_span = al.segment_of_span;
  for (std::size_t s : al.segment_of_span) out.rewards.push_back(seg_rewards.at(s));
  return out;
}

}  // namespace

PreparedPair prepare_pair(const PreferencePair& pair, const Vocab& vocab, const TrainingConfig& cfg,
                          const FrozenPolicy& ref) {
  try {
    const AspectWeights w = cfg.effective_weights();
    PreparedPair p;
    p.id = pair.id;
    p.prompt = vocab.encode(prompt_text(pair.history));
    p.chosen = prepare_response(pair.chosen, vocab, w);
    p.rejected = prepare_response(pair.rejected, vocab, w);
    if (p.chosen.ids.empty() || p.rejected.ids.empty()) fail(ErrorCode::EmptyResponse, "response has no tokens");
    p.chosen.loss_rewards = p.chosen.rewards;
    for (double r : p.rejected.rewards) p.rejected.loss_rewards.push_back(rejected_transform(r, cfg.rejected_mode));
    p.selection = select_segments(p.chosen.rewards, p.chosen.spans, p.rejected.rewards, p.rejected.spans);
    for (auto& sp : p.selection.pairs) sp.rejected.reward = rejected_transform(sp.rejected.reward, cfg.rejected_mode);
    if (ref) {
      p.ref_owner = ref;
      p.ref_chosen = std::make_shared<const SequenceTrace>(trace_response(*ref, p.prompt, p.chosen.ids));
      p.ref_rejected = std::make_shared<const SequenceTrace>(trace_response(*ref, p.prompt, p.rejected.ids));
    }
    return p;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigError) throw;
    fail(ErrorCode::DataError, "pair '" + pair.id + "': " + e.what());
  }
}

std::vector<PreparedPair> prepare_dataset(const std::vector<PreferencePair>& pairs, const Vocab& vocab,
                                          const TrainingConfig& cfg, const FrozenPolicy& ref) {
  if (pairs.empty()) fail(ErrorCode::DataError, "dataset is empty");
  std::vector<PreparedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(prepare_pair(p, vocab, cfg, ref));
  return out;
}

double batch_beta(const TrainingConfig& cfg, std::span<const PreparedPair* const> batch) {
  if (cfg.method == Method::Dpo) return cfg.beta_target;
  std::vector<double> rewards;
  for (const PreparedPair* p : batch) {
    if (cfg.method == Method::TwoDGrouped) {
      for (const auto& sp : p->selection.pairs) {
        rewards.push_back(sp.chosen.reward);
        rewards.push_back(sp.rejected.reward);
      }
    } else {
      rewards.insert(rewards.end(), p->chosen.loss_rewards.begin(), p->chosen.loss_rewards.end());
      rewards.insert(rewards.end(), p->rejected.loss_rewards.begin(), p->rejected.loss_rewards.end());
    }
  }
  return adaptive_beta(rewards, cfg.beta_target);
}

LossOutput pair_loss(const TrainingConfig& cfg, const PreparedPair& pair, const TokenLogRatios& ratios,
                     std::span<const double> chosen_log_probs, double beta) {
  LossOutput pref;
  switch (cfg.method) {
    case Method::Dpo:
      pref = dpo_loss(ratios, beta);
      break;
    case Method::OneD:
    case Method::TwoD:
      pref = two_d_loss(ratios, pair.chosen.spans, pair.rejected.spans, pair.chosen.loss_rewards,
                        pair.rejected.loss_rewards, beta);
      break;
    case Method::TwoDGrouped:
      pref = grouped_two_d_loss(pair.selection, ratios, beta);
      break;
  }
  return combined_loss(pref, mean_nll(chosen_log_probs), cfg.sft_coeff);
}

BatchResult batch_objective(const TrainingConfig& cfg, const PolicyParams& theta,
                            std::span<const PreparedPair* const> batch, PolicyParams* grads) {
  if (batch.empty()) fail(ErrorCode::EmptyBatch, "empty batch");
  BatchResult res;
  res.beta = batch_beta(cfg, batch);
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const PreparedPair* p : batch) {
    if (!p->ref_chosen || !p->ref_rejected) fail(ErrorCode::InvalidArgument, "pair prepared without a reference");
    const auto tw = trace_response(theta, p->prompt, p->chosen.ids);
    const auto tl = trace_response(theta, p->prompt, p->rejected.ids);
    TokenLogRatios ratios;
    const auto logp_w = tw.target_log_probs();
    ratios.chosen.resize(tw.length());
    ratios.rejected.resize(tl.length());
    for (std::size_t t = 0; t < tw.length(); ++t) ratios.chosen[t] = logp_w[t] - p->ref_chosen->target_log_prob(t);
    for (std::size_t t = 0; t < tl.length(); ++t)
      ratios.rejected[t] = tl.target_log_prob(t) - p->ref_rejected->target_log_prob(t);

    auto out = pair_loss(cfg, *p, ratios, logp_w, res.beta);
    res.loss += scale * out.loss;
    if (grads) {
      for (double& g : out.grad_chosen) g *= scale;
      for (double& g : out.grad_rejected) g *= scale;
      accumulate_gradient(theta, tw, out.grad_chosen, *grads);
      accumulate_gradient(theta, tl, out.grad_rejected, *grads);
    }
  }
  return res;
}

std::string to_csv_row(const MetricsRecord& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.step << ',' << r.loss << ',' << r.chosen_reward << ',' << r.rejected_reward << ',' << r.margin << ','
     << r.accuracy << ',' << r.kl_chosen << ',' << r.kl_rejected;
  return os.str();
}

double reward_accuracy(std::span<const GroupDiagnostics> groups) {
  if (groups.empty()) fail(ErrorCode::EmptyBatch, "reward accuracy of an empty batch");
  std::size_t wins = 0;
  for (const auto& g : groups) wins += g.chosen_reward > g.rejected_reward ? 1 : 0;
  return static_cast<double>(wins) / static_cast<double>(groups.size());
}

namespace {

double sum(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

double sequence_reward_of(const SequenceTrace& theta, const SequenceTrace& ref, double beta) {
  double s = 0.0;
  for (std::size_t t = 0; t < theta.length(); ++t) s += theta.target_log_prob(t) - ref.target_log_prob(t);
  return beta * s;
}

}  // namespace

MetricsRecord measure(const TrainingConfig& cfg, const PolicyParams& theta, const std::vector<PreparedPair>& pairs) {
  if (pairs.empty()) fail(ErrorCode::EmptyBatch, "no pairs to measure");
  MetricsRecord m;
  std::vector<GroupDiagnostics> groups;
  groups.reserve(pairs.size());
  for (const auto& p : pairs) {
    const auto tw = trace_response(theta, p.prompt, p.chosen.ids);
    const auto tl = trace_response(theta, p.prompt, p.rejected.ids);
    const GroupDiagnostics g{sequence_reward_of(tw, *p.ref_chosen, cfg.beta_target),
                             sequence_reward_of(tl, *p.ref_rejected, cfg.beta_target)};
    groups.push_back(g);
    m.chosen_reward += g.chosen_reward;
    m.rejected_reward += g.rejected_reward;
    m.kl_chosen += sequential_kl(tw, *p.ref_chosen);
    m.kl_rejected += sequential_kl(tl, *p.ref_rejected);
  }
  const double n = static_cast<double>(pairs.size());
  m.chosen_reward /= n;
  m.rejected_reward /= n;
  m.kl_chosen /= n;
  m.kl_rejected /= n;
  m.margin = m.chosen_reward - m.rejected_reward;
  m.accuracy = reward_accuracy(groups);
  return m;
}

TrainResult train(const TrainingConfig& cfg, const std::vector<PreferencePair>& data, const Vocab& vocab,
                  const PolicyParams& init, const FrozenPolicy& ref, const MetricsCallback& on_record) {
  cfg.validate();
  if (!ref) fail(ErrorCode::InvalidArgument, "training needs a reference policy");
  if (init.shape() != ref->shape()) fail(ErrorCode::ShapeMismatch, "policy and reference shapes differ");
  if (init.shape().vocab != vocab.size())
    fail(ErrorCode::DataError, "policy vocabulary size " + std::to_string(init.shape().vocab) +
                                   " differs from the vocabulary (" + std::to_string(vocab.size()) + ")");
  const auto pairs = prepare_dataset(data, vocab, cfg, ref);

  TrainResult res{init, {}, {}};
  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  adam.total_steps = cfg.steps;
  OptimizerState state;
  PolicyParams grads(init.shape());

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed ^ 0x2d9f6b1e4a7c3508ULL);
  std::size_t cursor = order.size();
  auto next_pair = [&]() -> const PreparedPair* {
    if (cursor == order.size()) {
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
      cursor = 0;
    }
    return &pairs[order[cursor++]];
  };

  std::vector<const PreparedPair*> batch(cfg.batch_size);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::fill(grads.values().begin(), grads.values().end(), 0.0);
    double loss = 0.0;
    std::string ids;
    for (std::size_t a = 0; a < cfg.grad_accum; ++a) {
      for (auto& p : batch) p = next_pair();
      loss += batch_objective(cfg, res.params, batch, &grads).loss / static_cast<double>(cfg.grad_accum);
      for (const auto* p : batch) ids += (ids.empty() ? "" : ",") + p->id;
    }
    if (!std::isfinite(loss))
      fail(ErrorCode::NonFiniteLoss, "loss " + std::to_string(loss) + " at step " + std::to_string(step) +
                                         " (pairs " + ids + ")");
    if (cfg.grad_accum > 1)
      for (double& g : grads.values()) g /= static_cast<double>(cfg.grad_accum);
    optimize_step(res.params, grads, state, adam);
    res.step_losses.push_back(loss);

    if (step == 1 || step % cfg.log_interval == 0 || step == cfg.steps) {
      MetricsRecord rec = measure(cfg, res.params, pairs);
      rec.step = step;
      rec.loss = loss;
      res.metrics.push_back(rec);
      if (on_record) on_record(rec);
    }
  }
  return res;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::ShapeMismatch, "spearman needs equal-length inputs");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (x.size() < 2) return nan;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = sum(rx) / n, my = sum(ry) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return nan;
  return sxy / std::sqrt(sxx * syy);
}

namespace {

std::vector<SegmentReport> segment_reports(const PreparedResponse& r, const SequenceTrace& theta,
                                           const SequenceTrace& ref, double beta) {
  std::vector<SegmentReport> out;
  for (std::size_t k = 0; k < r.spans.size(); ++k) {
    const auto& sp = r.spans[k];
    double s = 0.0;
    for (std::size_t t = sp.start; t < sp.end(); ++t) s += theta.target_log_prob(t) - ref.target_log_prob(t);
    out.push_back({r.segment_of_span[k], sp, beta * s / static_cast<double>(sp.length), r.rewards[k]});
  }
  return out;
}

json segments_json(const std::vector<SegmentReport>& segs) {
  json a = json::array();
  for (const auto& s : segs)
    a.push_back({{"segment", s.segment},
                 {"span", {s.span.start, s.span.length}},
                 {"mean_implicit_reward", s.mean_implicit_reward},
                 {"annotated_reward", s.annotated_reward}});
  return a;
}

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

}  // namespace

EvaluationReport evaluate(const TrainingConfig& cfg, const PolicyParams& theta, const FrozenPolicy& ref,
                          const std::vector<PreferencePair>& data, const Vocab& vocab) {
  if (!ref) fail(ErrorCode::InvalidArgument, "evaluation needs a reference policy");
  if (theta.shape() != ref->shape() || theta.shape().vocab != vocab.size())
    fail(ErrorCode::DataError, "policy, reference and vocabulary do not match");
  const auto pairs = prepare_dataset(data, vocab, cfg, ref);

  EvaluationReport rep;
  std::vector<GroupDiagnostics> groups;
  std::vector<double> implicit, annotated;
  for (const auto& p : pairs) {
    const auto tw = trace_response(theta, p.prompt, p.chosen.ids);
    const auto tl = trace_response(theta, p.prompt, p.rejected.ids);
    PairReport pr;
    pr.id = p.id;
    pr.chosen_reward = sequence_reward_of(tw, *p.ref_chosen, cfg.beta_target);
    pr.rejected_reward = sequence_reward_of(tl, *p.ref_rejected, cfg.beta_target);
    pr.kl_chosen = sequential_kl(tw, *p.ref_chosen);
    pr.kl_rejected = sequential_kl(tl, *p.ref_rejected);
    pr.chosen_segments = segment_reports(p.chosen, tw, *p.ref_chosen, cfg.beta_target);
    pr.rejected_segments = segment_reports(p.rejected, tl, *p.ref_rejected, cfg.beta_target);
    for (const auto& s : pr.chosen_segments) {
      implicit.push_back(s.mean_implicit_reward);
      annotated.push_back(s.annotated_reward);
    }
    groups.push_back({pr.chosen_reward, pr.rejected_reward});
    rep.mean_margin += pr.chosen_reward - pr.rejected_reward;
    rep.mean_kl_chosen += pr.kl_chosen;
    rep.mean_kl_rejected += pr.kl_rejected;
    rep.pairs.push_back(std::move(pr));
  }
  const double n = static_cast<double>(pairs.size());
  rep.mean_margin /= n;
  rep.mean_kl_chosen /= n;
  rep.mean_kl_rejected /= n;
  rep.accuracy = reward_accuracy(groups);
  rep.spearman = spearman(implicit, annotated);
  rep.spearman_defined = std::isfinite(rep.spearman);
  return rep;
}

json EvaluationReport::to_json() const {
  json ps = json::array();
  for (const auto& p : pairs)
    ps.push_back({{"id", p.id},
                  {"chosen_reward", p.chosen_reward},
                  {"rejected_reward", p.rejected_reward},
                  {"kl_chosen", p.kl_chosen},
                  {"kl_rejected", p.kl_rejected},
                  {"chosen_segments", segments_json(p.chosen_segments)},
                  {"rejected_segments", segments_json(p.rejected_segments)}});
  return {{"accuracy", accuracy},
          {"mean_margin", mean_margin},
          {"mean_kl_chosen", mean_kl_chosen},
          {"mean_kl_rejected", mean_kl_rejected},
          {"kl", "sum over response positions"},
          {"spearman", number_or_null(spearman)},
          {"spearman_defined", spearman_defined},
          {"pairs", ps}};
}

std::pair<std::size_t, std::size_t> pick_best_worst(std::span<const double> scores) {
  if (scores.empty()) fail(ErrorCode::EmptyBatch, "no scores to rank");
  std::size_t best = 0, worst = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
    if (scores[i] < scores[worst]) worst = i;
  }
  return {best, worst};
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

ScoreMatrix score_checked(Scorer& scorer, const std::vector<Utterance>& history, const std::vector<Segment>& segs) {
  ScoreMatrix m;
  try {
    m = scorer.score(history, segs);
  } catch (const std::exception& e) {
    fail(ErrorCode::ScorerFailure, std::string("scorer failed: ") + e.what());
  }
  if (m.segments() != segs.size())
    fail(ErrorCode::ScorerFailure, "scorer returned " + std::to_string(m.segments()) + " rows for " +
                                       std::to_string(segs.size()) + " segments");
  for (const auto& row : m.rows)
    for (Aspect a : kAllAspects)
      if (!is_valid_score(a, row[index_of(a)]))
        fail(ErrorCode::ScorerFailure, "scorer returned an invalid " + std::string(aspect_name(a)) + " score");
  return m;
}

}  // namespace

RoundResult iterate_round(const PolicyParams& params, const FrozenPolicy& ref, const IterationRound& round,
                          const TrainingConfig& cfg, const Vocab& vocab) {
  cfg.validate();
  if (!round.scorer) fail(ErrorCode::InvalidArgument, "iteration round needs a scorer");
  if (round.samples < 2) fail(ErrorCode::ConfigError, "samples per instruction must be >= 2");
  const AspectWeights w = cfg.effective_weights();
  const SamplingConfig sampling{cfg.temperature, cfg.top_p, cfg.max_tokens};

  RoundResult res;
  for (std::size_t i = 0; i < round.instructions.size(); ++i) {
    const auto& history = round.instructions[i];
    std::vector<TokenId> prompt;
    try {
      prompt = vocab.encode(prompt_text(history));
    } catch (const Error& e) {
      fail(ErrorCode::DataError, "instruction " + std::to_string(i) + ": " + e.what());
    }

    std::vector<std::string> texts;
    for (std::size_t j = 0; j < round.samples; ++j) {
      const std::uint64_t seed = splitmix(splitmix(splitmix(cfg.seed) ^ round.index) ^ i) ^ j;
      texts.push_back(vocab.decode(sample_tokens(params, prompt, sampling, splitmix(seed))));
    }
    if (std::all_of(texts.begin(), texts.end(), [&](const std::string& t) { return t == texts.front(); })) {
      ++res.skipped;
      continue;
    }

    std::vector<AnnotatedResponse> candidates;
    std::vector<double> scores;
    for (const auto& text : texts) {
      std::vector<Segment> segs;
      try {
        segs = segment_response(text);
      } catch (const Error&) {
        continue;  // empty or whitespace-only sample
      }
      ScoreMatrix m = score_checked(*round.scorer, history, segs);
      scores.push_back(representative_score(normalize_matrix(m), w));
      candidates.push_back({std::move(segs), std::move(m), json::object()});
    }
    if (candidates.size() < 2) {
      ++res.skipped;
      continue;
    }
    const auto [best, worst] = pick_best_worst(scores);
    if (best == worst || candidates[best].text() == candidates[worst].text()) {
      ++res.skipped;
      continue;
    }
    PreferencePair pair;
    pair.id = "round" + std::to_string(round.index) + "-" + std::to_string(i);
    pair.history = history;
    pair.chosen = candidates[best];
    pair.rejected = candidates[worst];
    pair.provenance = json{{"annotator", "scorer"}, {"round", round.index}, {"scores", scores}};
    const auto report = validate_pair(pair);
    if (!report.accepted())
      fail(ErrorCode::ScorerFailure, "scored pair rejected: " + report.violations.front().message);
    res.dataset.push_back(std::move(pair));
  }
  if (res.dataset.empty())
    fail(ErrorCode::DegenerateRound, "every instruction produced identical or unrankable samples");
  res.training = train(cfg, res.dataset, vocab, params, ref);
  return res;
}

}  // namespace twodpo
