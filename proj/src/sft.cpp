#include <algorithm>
#include <numeric>
#include <random>

#include "twodpo/error.hpp"
#include "twodpo/optimizer.hpp"
#include "twodpo/policy.hpp"

namespace twodpo {

namespace {

std::vector<TokenId> with_eos(const SftExample& ex) {
  std::vector<TokenId> r = ex.response;
  r.push_back(kEosId);
  return r;
}

}  // namespace

double corpus_nll(const PolicyParams& params, std::span<const SftExample> corpus) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& ex : corpus) {
    const auto tr = trace_response(params, ex.prompt, with_eos(ex));
    for (std::size_t t = 0; t < tr.length(); ++t) total -= tr.target_log_prob(t);
    tokens += tr.length();
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

SftResult sft_train(std::span<const SftExample> corpus, const SftConfig& cfg) {
  if (corpus.empty()) fail(ErrorCode::EmptyCorpus, "SFT corpus is empty");
  if (cfg.batch_size == 0) fail(ErrorCode::ConfigError, "SFT batch size must be positive");

  SftResult res{PolicyParams::initialize(cfg.shape, cfg.seed), {}};
  const std::size_t batches = (corpus.size() + cfg.batch_size - 1) / cfg.batch_size;
  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  adam.total_steps = cfg.epochs * batches;
  OptimizerState state;

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed ^ 0x5f7d1c3a9e2b4d61ULL);
  PolicyParams grads(cfg.shape);

  res.epoch_nll.push_back(corpus_nll(res.params, corpus));
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with our own draws so the order does not depend on the
    // standard library's shuffle.
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    for (std::size_t b = 0; b < batches; ++b) {
      std::fill(grads.values().begin(), grads.values().end(), 0.0);
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(lo + cfg.batch_size, order.size());
      const double scale = 1.0 / static_cast<double>(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) {
        const auto& ex = corpus[order[i]];
        const auto target = with_eos(ex);
        const auto tr = trace_response(res.params, ex.prompt, target);
        std::vector<double> coeff(tr.length(), -scale / static_cast<double>(tr.length()));
        accumulate_gradient(res.params, tr, coeff, grads);
      }
      optimize_step(res.params, grads, state, adam);
    }
    res.epoch_nll.push_back(corpus_nll(res.params, corpus));
  }
  return res;
}

}  // namespace twodpo
