#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "support.hpp"
#include "twodpo/annotation.hpp"
#include "twodpo/loss.hpp"
#include "twodpo/reward.hpp"
#include "twodpo/synthetic.hpp"
#include "twodpo/trainer.hpp"

using namespace twodpo;
using twodpo::testing::Gen;
using twodpo::testing::rel_error;

namespace {

struct Unmet : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void expect(bool ok, const std::string& what) {
  if (!ok) throw Unmet(what);
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Instance {
  TokenLogRatios ratios;
  std::vector<TokenSpan> sw, sl;
  std::vector<double> rw, rl;
  double beta;
};

Instance random_instance(Gen& g) {
  Instance in;
  const std::size_t tw = g.index(1, 32), tl = g.index(1, 32);
  in.ratios.chosen = g.doubles(tw, -2.0, 2.0);
  in.ratios.rejected = g.doubles(tl, -2.0, 2.0);
  in.sw = g.partition(tw, g.index(1, std::min<std::size_t>(5, tw)));
  in.sl = g.partition(tl, g.index(1, std::min<std::size_t>(5, tl)));
  in.rw = g.doubles(in.sw.size(), 0.0, 1.0);
  in.rl = g.doubles(in.sl.size(), 0.0, 1.0);
  in.beta = g.uniform(0.05, 1.0);
  return in;
}

// Largest relative error between analytic and central-difference gradients
// over every chosen and rejected token.
double gradient_error(const Instance& in, const std::function<LossOutput(const TokenLogRatios&)>& loss) {
  const LossOutput at = loss(in.ratios);
  double worst = 0.0;
  for (int side = 0; side < 2; ++side) {
    auto x = side == 0 ? in.ratios.chosen : in.ratios.rejected;
    const auto& analytic = side == 0 ? at.grad_chosen : at.grad_rejected;
    auto f = [&](const std::vector<double>& v) {
      return loss(side == 0 ? TokenLogRatios{v, in.ratios.rejected} : TokenLogRatios{in.ratios.chosen, v}).loss;
    };
    for (std::size_t i = 0; i < x.size(); ++i)
      worst = std::max(worst, rel_error(analytic[i], twodpo::testing::central_difference(f, x, i)));
  }
  return worst;
}

std::string gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Gen g(101);
  double worst[3] = {0, 0, 0};
  for (int n = 0; n < 20; ++n) {
    const Instance in = random_instance(g);
    const auto sel = select_segments(in.rw, in.sw, in.rl, in.sl);
    worst[0] = std::max(worst[0], gradient_error(in, [&](const TokenLogRatios& r) { return dpo_loss(r, in.beta); }));
    worst[1] = std::max(worst[1], gradient_error(in, [&](const TokenLogRatios& r) {
                          return two_d_loss(r, in.sw, in.sl, in.rw, in.rl, in.beta);
                        }));
    worst[2] = std::max(worst[2], gradient_error(in, [&](const TokenLogRatios& r) {
                          return grouped_two_d_loss(sel, r, in.beta);
                        }));
  }
  const double secs = seconds_since(t0);
  const std::string detail = fmt("max rel err dpo %.2e two_d %.2e grouped %.2e, %.2fs", worst[0], worst[1], worst[2], secs);
  expect(worst[0] < 1e-6 && worst[1] < 1e-6 && worst[2] < 1e-6 && secs < 5.0, detail);
  return detail;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

std::string reduction_identities() {
  Gen g(102);
  double worst = 0.0;
  const std::vector<double> one = {1.0};
  for (int n = 0; n < 50; ++n) {
    const Instance in = random_instance(g);
    const std::vector<TokenSpan> fw = {{0, in.ratios.chosen.size()}}, fl = {{0, in.ratios.rejected.size()}};
    const auto d = dpo_loss(in.ratios, in.beta);
    const auto t = two_d_loss(in.ratios, fw, fl, one, one, in.beta);
    const auto q = grouped_two_d_loss(select_segments(one, fw, one, fl), in.ratios, in.beta);
    for (const auto* o : {&t, &q}) {
      worst = std::max({worst, std::abs(o->loss - d.loss), max_abs_diff(o->grad_chosen, d.grad_chosen),
                        max_abs_diff(o->grad_rejected, d.grad_rejected)});
    }
  }
  const std::string detail = fmt("max |diff| %.2e over 50 instances", worst);
  expect(worst <= 1e-12, detail);
  return detail;
}

std::string initialization_value() {
  Gen g(103);
  double worst = 0.0;
  const auto pairs = load_dataset(twodpo::testing::fixture("synthetic_train.jsonl"));
  const Vocab vocab = build_vocab(pairs);
  TrainingConfig cfg;
  cfg.method = Method::TwoDGrouped;
  cfg.sft_coeff = 0.0;
  cfg.dim = 8;
  cfg.hidden = 8;
  PolicyParams theta({vocab.size(), cfg.dim, cfg.context, cfg.hidden});
  for (double& x : theta.values()) x = g.normal(0.5);
  const FrozenPolicy ref = clone_reference(theta);
  for (std::size_t i = 0; i < 50; ++i) {
    const PreparedPair p = prepare_pair(pairs[i], vocab, cfg, ref);
    const TokenLogRatios r{response_log_ratios(theta, *ref, p.prompt, p.chosen.ids),
                           response_log_ratios(theta, *ref, p.prompt, p.rejected.ids)};
    const double beta = g.uniform(0.05, 1.0);
    const auto out = grouped_two_d_loss(p.selection, r, beta);
    for (const auto& grp : out.groups) expect(grp.chosen_reward == 0.0 && grp.rejected_reward == 0.0, "non-zero group reward");
    worst = std::max(worst, std::abs(out.loss - static_cast<double>(p.selection.size()) * twodpo::testing::kLn2));
    const PreparedPair* batch[] = {&p};
    worst = std::max(worst, std::abs(batch_objective(cfg, theta, batch, nullptr).loss -
                                     static_cast<double>(p.selection.size()) * twodpo::testing::kLn2));
  }
  const std::string detail = fmt("max |loss - N ln 2| %.2e over 50 fixture pairs", worst);
  expect(worst <= 1e-12, detail);
  return detail;
}

std::string varying_beta_masking() {
  PreferencePair pair;
  pair.id = "mask";
  pair.history = {{"user", "explain tea"}};
  pair.chosen.segments = segment_response("Tea is precise.");
  pair.chosen.scores.rows = {{4, 4, 4, 4, 4}};
  pair.rejected.segments = segment_response("Tea is wrong. A zebra seems fine.");
  pair.rejected.scores.rows = {{1, 0, 0, 1, 1}, {3, 3, 4, 2, 3}};
  const Vocab vocab = build_vocab({pair});

  TrainingConfig cfg;
  cfg.method = Method::TwoDGrouped;
  cfg.sft_coeff = 0.0;
  cfg.dim = 4;
  cfg.hidden = 6;
  cfg.context = 3;
  const PolicyShape shape{vocab.size(), cfg.dim, cfg.context, cfg.hidden};
  Gen g(104);
  PolicyParams theta(shape), ref_params(shape);
  for (double& x : theta.values()) x = g.normal(0.7);
  for (double& x : ref_params.values()) x = g.normal(0.7);
  const PreparedPair p = prepare_pair(pair, vocab, cfg, clone_reference(ref_params));
  expect(p.selection.size() == 1 && p.selection.pairs[0].rejected.segment == 0, "unexpected selection");
  const PreparedPair* batch[] = {&p};

  PolicyParams grads(shape);
  const double base = batch_objective(cfg, theta, batch, &grads).loss;
  auto row_effect = [&](const std::string& token, double* grad_norm) {
    const std::size_t id = static_cast<std::size_t>(*vocab.find(token));
    double worst = 0.0, gsum = 0.0;
    for (std::size_t k = 0; k < shape.dim; ++k) {
      const std::size_t i = id * shape.dim + k;
      gsum += std::abs(grads.values()[i]);
      for (double h : {1e-5, 1e-3, 1e-1}) {
        const double saved = theta.values()[i];
        theta.values()[i] = saved + h;
        worst = std::max(worst, std::abs(batch_objective(cfg, theta, batch, nullptr).loss - base));
        theta.values()[i] = saved;
      }
    }
    *grad_norm = gsum;
    return worst;
  };
  double masked_grad = 0.0, live_grad = 0.0;
  const double masked = row_effect("zebra ", &masked_grad);
  const double live = row_effect("wrong", &live_grad);
  const std::string detail =
      fmt("unselected-only parameter: |dloss| %.2e, grad %.2e; selected control: |dloss| %.2e", masked, masked_grad, live);
  expect(masked < 1e-10 && masked_grad == 0.0 && live > 1e-6, detail);
  return detail;
}

std::string selection_oracle() {
  Gen g(105);
  std::size_t tie_draws = 0;
  for (int n = 0; n < 1000; ++n) {
    const std::size_t sw = g.index(1, 6), sl = g.index(1, 6);
    const bool coarse = n % 2 == 1;
    std::vector<double> w, l;
    for (std::size_t k = 0; k < sw; ++k) w.push_back(coarse ? static_cast<double>(g.index(0, 4)) / 4.0 : g.uniform(0, 1));
    for (std::size_t k = 0; k < sl; ++k) l.push_back(coarse ? static_cast<double>(g.index(0, 4)) / 4.0 : g.uniform(0, 1));
    auto idx = [](const PairedSelection& s) {
      std::vector<std::pair<std::size_t, std::size_t>> v;
      for (const auto& p : s.pairs) v.emplace_back(p.chosen.segment, p.rejected.segment);
      return v;
    };
    const auto got = idx(select_segments(w, l));
    expect(got == twodpo::testing::selection_oracle(w, l), fmt("mismatch on draw %d", n));
    const double c = g.uniform(0.01, 100.0);
    for (auto& x : w) x *= c;
    for (auto& x : l) x *= c;
    expect(idx(select_segments(w, l)) == got, fmt("scaling changed selection on draw %d", n));
    std::map<double, int> seen;
    for (double x : w) ++seen[x];
    for (double x : l) ++seen[x];
    tie_draws += seen.size() < sw + sl ? 1 : 0;
  }
  return fmt("1000 draws agree with enumeration (%zu with ties), scaling invariant", tie_draws);
}

std::string adaptive_beta_identity() {
  Gen g(106);
  double worst = 0.0;
  for (int n = 0; n < 100; ++n) {
    const auto r = g.doubles(g.index(1, 80), 0.0, 1.0);
    const double b = adaptive_beta(r, 0.2);
    double m = 0.0;
    for (double x : r) m += b * x;
    worst = std::max(worst, std::abs(m / static_cast<double>(r.size()) - 0.2));
  }
  const std::string detail = fmt("max |mean(beta_eff r) - 0.2| %.2e over 100 batches", worst);
  expect(worst <= 1e-9, detail);
  return detail;
}

struct Fixture {
  std::vector<PreferencePair> train, heldout;
  Vocab vocab;
  PolicyParams sft;
  FrozenPolicy ref;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    x.train = load_dataset(twodpo::testing::fixture("synthetic_train.jsonl"));
    x.heldout = load_dataset(twodpo::testing::fixture("synthetic_heldout.jsonl"));
    std::vector<PreferencePair> all = x.train;
    all.insert(all.end(), x.heldout.begin(), x.heldout.end());
    x.vocab = build_vocab(all);
    TrainingConfig cfg;
    x.sft = sft_train(sft_corpus(x.train, x.vocab), sft_config(cfg, x.vocab.size())).params;
    x.ref = clone_reference(x.sft);
    return x;
  }();
  return f;
}

TrainingConfig alignment_config(Method m) {
  TrainingConfig cfg;
  cfg.method = m;
  cfg.rejected_mode = RejectedRewardMode::Inverted;
  cfg.steps = 700;
  cfg.seed = 0;
  cfg.log_interval = 100;
  return cfg;
}

const TrainResult& two_d_run() {
  static const TrainResult r = [] {
    const Fixture& f = fixture();
    return train(alignment_config(Method::TwoD), f.train, f.vocab, f.sft, f.ref);
  }();
  return r;
}

std::string synthetic_alignment() {
  const auto t0 = std::chrono::steady_clock::now();
  const Fixture& f = fixture();
  const TrainResult& r = two_d_run();
  const auto& first = r.metrics.front();
  const auto& last = r.metrics.back();
  const auto ev = evaluate(alignment_config(Method::TwoD), r.params, f.ref, f.heldout, f.vocab);
  const double secs = seconds_since(t0);
  const std::string detail = fmt(
      "vocab %zu, 700 steps: accuracy %.3f, margin %.3f vs %.4f at step %zu (x%.1f), held-out rho %.3f, %.1fs",
      f.vocab.size(), last.accuracy, last.margin, first.margin, first.step, last.margin / first.margin, ev.spearman,
      secs);
  expect(last.accuracy >= 0.9 && first.margin > 0.0 && last.margin > 10.0 * first.margin && ev.spearman_defined &&
             ev.spearman >= 0.5 && secs < 300.0,
         detail);
  return detail;
}

std::string kl_trend() {
  const Fixture& f = fixture();
  const auto& two_d = two_d_run().metrics.back();
  const auto dpo = train(alignment_config(Method::Dpo), f.train, f.vocab, f.sft, f.ref).metrics.back();
  const std::string detail = fmt("KL chosen %.3f vs dpo %.3f, rejected %.3f vs dpo %.3f", two_d.kl_chosen,
                                 dpo.kl_chosen, two_d.kl_rejected, dpo.kl_rejected);
  expect(two_d.kl_chosen <= dpo.kl_chosen && two_d.kl_rejected <= dpo.kl_rejected, detail);
  return detail;
}

std::string method_equivalence() {
  const Fixture& f = fixture();
  TrainingConfig one = alignment_config(Method::OneD);
  one.rejected_mode = RejectedRewardMode::Raw;
  one.steps = 100;
  one.weights = {0.3, 0.4, 0.1, 0.1, 0.1};
  TrainingConfig two = one;
  two.method = Method::TwoD;
  two.weights = {1, 0, 0, 0, 0};
  const auto a = train(one, f.train, f.vocab, f.sft, f.ref);
  const auto b = train(two, f.train, f.vocab, f.sft, f.ref);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.step_losses.size(); ++i) worst = std::max(worst, std::abs(a.step_losses[i] - b.step_losses[i]));
  const std::string detail = fmt("%zu steps, max |loss diff| %.2e", a.step_losses.size(), worst);
  expect(a.step_losses.size() == 100 && b.step_losses.size() == 100 && worst <= 1e-12, detail);
  return detail;
}

std::string pipeline_round_trip() {
  Gen g(110);
  const std::vector<Utterance> history = {{"user", "Name two colors."}};
  for (int n = 0; n < 25; ++n) {
    const std::size_t s1 = g.index(1, 5), s2 = g.index(1, 5);
    const ScoreMatrix m1 = g.matrix(s1), m2 = g.matrix(s2);
    MockJudge judge(static_cast<std::uint64_t>(n), [&](Aspect a, int response, std::size_t) {
      return (response == 1 ? m1 : m2).column(a);
    });
    std::string t1, t2;
    for (std::size_t k = 0; k < s1; ++k) t1 += "Red is item " + std::to_string(k) + ". ";
    for (std::size_t k = 0; k < s2; ++k) t2 += "Blue is item " + std::to_string(k) + "? ";
    const auto res = annotate_pair("rt" + std::to_string(n), history, segment_response(t1), segment_response(t2), judge);
    const PreferencePair back = parse_record(serialize_record(res.pair));
    expect(validate_pair(back).accepted(), "annotated pair failed validation");
    expect(back.chosen.scores == m1 && back.rejected.scores == m2, fmt("matrix differs from script on pair %d", n));
  }

  PreferencePair base;
  base.id = "v";
  base.history = history;
  base.chosen.segments = segment_response("Red. Blue.");
  base.chosen.scores.rows = {{4, 4, 4, 2, 4}, {4, 4, 4, 3, 4}};
  base.rejected.segments = segment_response("Green.");
  base.rejected.scores.rows = {{1, 1, 0, 1, 1}};
  expect(validate_pair(base).accepted(), "baseline pair rejected");
  auto safety = base, range = base, completeness = base;
  safety.chosen.scores.rows[0][index_of(Aspect::Safety)] = 2;
  range.rejected.scores.rows[0][index_of(Aspect::Clarity)] = 5;
  completeness.chosen.scores.rows[1][index_of(Aspect::Completeness)] = 1;
  for (const auto* bad : {&safety, &range, &completeness})
    expect(!validate_pair(*bad).accepted(), "validator accepted an invalid matrix");

  using V = Vote;
  const std::vector<V> three_wrong = {V::Incorrect, V::Correct, V::Incorrect, V::Correct, V::Incorrect};
  const std::vector<V> two_wrong = {V::Incorrect, V::Correct, V::Incorrect, V::Correct, V::Correct};
  expect(majority_vote_accuracy({three_wrong}) == 0.0 && majority_vote_accuracy({two_wrong}) == 1.0,
         "majority vote rule");
  return "25 scripted pairs round-trip; Safety 2, score 5, falling Completeness rejected; 3-of-5 rule holds";
}

class RankingScorer : public Scorer {
 public:
  ScoreMatrix score(const std::vector<Utterance>&, const std::vector<Segment>& segments) override {
    ScoreMatrix m;
    int completeness = 0;
    for (const auto& s : segments) {
      const std::size_t h = std::hash<std::string>{}(s.text);
      completeness = std::max(completeness, static_cast<int>(h % 5));
      m.rows.push_back({static_cast<int>(h / 5 % 5), static_cast<int>(h / 25 % 5), h / 125 % 2 ? 4 : 0, completeness,
                        static_cast<int>(h / 250 % 5)});
    }
    return m;
  }
};

std::string representative_scoring() {
  Gen g(111);
  double worst = 0.0;
  const auto w = AspectWeights::standard();
  for (int n = 0; n < 50; ++n) {
    const ScoreMatrix m = g.matrix(g.index(1, 8));
    worst = std::max(worst, std::abs(representative_score(normalize_matrix(m), w) -
                                     twodpo::testing::representative_oracle(m, w.values())));
  }
  expect(worst <= 1e-12, fmt("oracle mismatch %.2e", worst));

  const Fixture& f = fixture();
  TrainingConfig cfg;
  cfg.steps = 2;
  cfg.samples = 4;
  cfg.temperature = 1.0;
  cfg.top_p = 1.0;
  cfg.max_tokens = 24;
  RankingScorer scorer;
  PolicyParams uniform(f.sft.shape());
  const auto round = iterate_round(uniform, f.ref, {0, synthetic_instructions(), cfg.samples, &scorer}, cfg, f.vocab);
  expect(!round.dataset.empty(), "no pairs formed");
  for (const auto& p : round.dataset) {
    std::vector<double> scores;
    for (const auto& s : p.provenance->at("scores")) scores.push_back(s.get<double>());
    const auto [best, worst_i] = pick_best_worst(scores);
    expect(representative_score(normalize_matrix(p.chosen.scores), w) == scores[best] &&
               representative_score(normalize_matrix(p.rejected.scores), w) == scores[worst_i],
           "pair is not argmax/argmin of its scores");
  }
  return fmt("max |diff| %.2e over 50 matrices; %zu iterate pairs are argmax/argmin", worst, round.dataset.size());
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<std::string()>>> criteria = {
      {"gradient oracle", gradient_oracle},
      {"reduction identities", reduction_identities},
      {"initialization value", initialization_value},
      {"varying-beta masking", varying_beta_masking},
      {"segment selection oracle", selection_oracle},
      {"adaptive beta identity", adaptive_beta_identity},
      {"end-to-end synthetic alignment", synthetic_alignment},
      {"KL trend", kl_trend},
      {"method equivalence", method_equivalence},
      {"pipeline round trip", pipeline_round_trip},
      {"representative scoring", representative_scoring},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    std::string verdict = "PASS", detail;
    try {
      detail = criteria[i].second();
    } catch (const std::exception& e) {
      verdict = "FAIL";
      detail = e.what();
      ++failed;
    }
    std::printf("%s %zu %s: %s\n", verdict.c_str(), i + 1, criteria[i].first, detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
