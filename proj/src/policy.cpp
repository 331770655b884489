#include "twodpo/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "twodpo/error.hpp"

namespace twodpo {

namespace {

struct Layout {
  std::size_t embedding, w1, b1, w2, b2, out, out_bias, total;

  explicit Layout(const PolicyShape& s) {
    const std::size_t V = s.vocab, d = s.dim, C = s.context, h = s.hidden;
    embedding = 0;
    w1 = embedding + V * d;
    b1 = w1 + h * C * d;
    w2 = b1 + h;
    b2 = w2 + d * h;
    out = b2 + d;
    out_bias = out + V * d;
    total = out_bias + V;
  }
};

void check_id(TokenId id, std::size_t vocab) {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab)
    fail(ErrorCode::UnknownToken, "token id " + std::to_string(id) + " outside vocabulary of " +
                                      std::to_string(vocab));
}

// Last C tokens of `history`, left-padded with end-of-sequence.
void fill_window(std::span<const TokenId> history, std::size_t C, TokenId* window) {
  const std::size_t n = std::min(history.size(), C);
  std::fill(window, window + (C - n), kEosId);
  std::copy(history.end() - static_cast<std::ptrdiff_t>(n), history.end(), window + (C - n));
}

void log_softmax(std::span<double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  const double lse = m + std::log(s);
  for (double& x : v) x -= lse;
}

// One forward step. `z`, `o`, `logp` receive the activations.
void forward_step(const PolicyParams& p, const TokenId* window, double* z, double* o, double* logp) {
  const auto& s = p.shape();
  const std::size_t V = s.vocab, d = s.dim, C = s.context, h = s.hidden;
  const auto E = p.embedding();
  const auto W1 = p.w1();
  const auto B1 = p.b1();
  const auto W2 = p.w2();
  const auto B2 = p.b2();
  const auto U = p.out();
  const auto BU = p.out_bias();

  std::vector<double> x(C * d);
  for (std::size_t j = 0; j < C; ++j)
    std::copy_n(E.data() + static_cast<std::size_t>(window[j]) * d, d, x.data() + j * d);

  for (std::size_t i = 0; i < h; ++i) {
    const double* row = W1.data() + i * C * d;
    double a = B1[i];
    for (std::size_t k = 0; k < C * d; ++k) a += row[k] * x[k];
    z[i] = std::tanh(a);
  }
  for (std::size_t i = 0; i < d; ++i) {
    const double* row = W2.data() + i * h;
    double a = B2[i];
    for (std::size_t k = 0; k < h; ++k) a += row[k] * z[k];
    o[i] = a;
  }
  for (std::size_t v = 0; v < V; ++v) {
    const double* row = U.data() + v * d;
    double a = BU[v];
    for (std::size_t k = 0; k < d; ++k) a += row[k] * o[k];
    logp[v] = a;
  }
  log_softmax({logp, V});
}

}  // namespace

std::size_t PolicyShape::parameter_count() const noexcept { return Layout(*this).total; }

PolicyParams::PolicyParams(const PolicyShape& shape) : shape_(shape) {
  if (shape.vocab == 0 || shape.dim == 0 || shape.context == 0 || shape.hidden == 0)
    fail(ErrorCode::InvalidArgument, "policy dimensions must be positive");
  values_.assign(shape.parameter_count(), 0.0);
}

PolicyParams PolicyParams::initialize(const PolicyShape& shape, std::uint64_t seed) {
  PolicyParams p(shape);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& w : p.embedding()) w = normal(rng);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(shape.context * shape.dim));
  for (double& w : p.w1()) w = s1 * normal(rng);
  const double s2 = 1.0 / std::sqrt(static_cast<double>(shape.hidden));
  for (double& w : p.w2()) w = s2 * normal(rng);
  return p;
}

#define TWODPO_BLOCK(name, first, next)                                                         \
  std::span<double> PolicyParams::name() noexcept {                                            \
    const Layout l(shape_);                                                                     \
    return block(l.first, l.next - l.first);                                                    \
  }                                                                                             \
  std::span<const double> PolicyParams::name() const noexcept {                                \
    const Layout l(shape_);                                                                     \
    return block(l.first, l.next - l.first);                                                    \
  }

TWODPO_BLOCK(embedding, embedding, w1)
TWODPO_BLOCK(w1, w1, b1)
TWODPO_BLOCK(b1, b1, w2)
TWODPO_BLOCK(w2, w2, b2)
TWODPO_BLOCK(b2, b2, out)
TWODPO_BLOCK(out, out, out_bias)
TWODPO_BLOCK(out_bias, out_bias, total)

#undef TWODPO_BLOCK

bool PolicyParams::finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
}

std::uint64_t PolicyParams::hash() const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  const std::size_t dims[] = {shape_.vocab, shape_.dim, shape_.context, shape_.hidden};
  mix(dims, sizeof dims);
  mix(values_.data(), values_.size() * sizeof(double));
  return h;
}

FrozenPolicy clone_reference(const PolicyParams& params) { return std::make_shared<const PolicyParams>(params); }

std::vector<double> token_log_probs(const PolicyParams& params, std::span<const TokenId> context) {
  const auto& s = params.shape();
  for (TokenId id : context) check_id(id, s.vocab);
  std::vector<TokenId> window(s.context);
  fill_window(context, s.context, window.data());
  std::vector<double> z(s.hidden), o(s.dim), logp(s.vocab);
  forward_step(params, window.data(), z.data(), o.data(), logp.data());
  return logp;
}

std::span<const double> SequenceTrace::log_probs(std::size_t t) const noexcept {
  return {logp_.data() + t * shape_.vocab, shape_.vocab};
}

std::vector<double> SequenceTrace::target_log_probs() const {
  std::vector<double> out(length());
  for (std::size_t t = 0; t < length(); ++t) out[t] = target_log_prob(t);
  return out;
}

SequenceTrace trace_response(const PolicyParams& params, std::span<const TokenId> prompt,
                             std::span<const TokenId> response) {
  const auto& s = params.shape();
  for (TokenId id : prompt) check_id(id, s.vocab);
  for (TokenId id : response) check_id(id, s.vocab);

  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), response.begin(), response.end());

  SequenceTrace tr;
  const std::size_t n = response.size();
  tr.shape_ = s;
  tr.targets_.assign(response.begin(), response.end());
  tr.windows_.resize(n * s.context);
  tr.hidden_.resize(n * s.hidden);
  tr.output_.resize(n * s.dim);
  tr.logp_.resize(n * s.vocab);
  for (std::size_t t = 0; t < n; ++t) {
    TokenId* w = tr.windows_.data() + t * s.context;
    fill_window(std::span<const TokenId>(seq).first(prompt.size() + t), s.context, w);
    forward_step(params, w, tr.hidden_.data() + t * s.hidden, tr.output_.data() + t * s.dim,
                 tr.logp_.data() + t * s.vocab);
  }
  return tr;
}

void accumulate_gradient(const PolicyParams& params, const SequenceTrace& trace,
                         std::span<const double> dloss_dlogp, PolicyParams& grads) {
  const auto& s = params.shape();
  if (grads.shape() != s || trace.shape_ != s)
    fail(ErrorCode::ShapeMismatch, "gradient buffer and trace must match the policy shape");
  if (dloss_dlogp.size() != trace.length())
    fail(ErrorCode::ShapeMismatch, "one coefficient per response token is required");

  const std::size_t V = s.vocab, d = s.dim, C = s.context, h = s.hidden;
  const auto E = params.embedding();
  const auto W1 = params.w1();
  const auto W2 = params.w2();
  const auto U = params.out();
  auto gE = grads.embedding();
  auto gW1 = grads.w1();
  auto gB1 = grads.b1();
  auto gW2 = grads.w2();
  auto gB2 = grads.b2();
  auto gU = grads.out();
  auto gBU = grads.out_bias();

  std::vector<double> g(V), go(d), dz(h), dx(C * d), x(C * d);
  for (std::size_t t = 0; t < trace.length(); ++t) {
    const double c = dloss_dlogp[t];
    if (c == 0.0) continue;
    const auto logp = trace.log_probs(t);
    const auto target = static_cast<std::size_t>(trace.targets_[t]);
    const double* z = trace.hidden_.data() + t * h;
    const double* o = trace.output_.data() + t * d;
    const TokenId* w = trace.windows_.data() + t * C;

    // d log p(target) / d logits = onehot - p
    for (std::size_t v = 0; v < V; ++v) g[v] = -c * std::exp(logp[v]);
    g[target] += c;

    std::fill(go.begin(), go.end(), 0.0);
    for (std::size_t v = 0; v < V; ++v) {
      const double gv = g[v];
      gBU[v] += gv;
      double* gu = gU.data() + v * d;
      const double* u = U.data() + v * d;
      for (std::size_t k = 0; k < d; ++k) {
        gu[k] += gv * o[k];
        go[k] += gv * u[k];
      }
    }

    std::fill(dz.begin(), dz.end(), 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      gB2[i] += go[i];
      double* gw = gW2.data() + i * h;
      const double* w2 = W2.data() + i * h;
      for (std::size_t k = 0; k < h; ++k) {
        gw[k] += go[i] * z[k];
        dz[k] += go[i] * w2[k];
      }
    }

    for (std::size_t j = 0; j < C; ++j)
      std::copy_n(E.data() + static_cast<std::size_t>(w[j]) * d, d, x.data() + j * d);
    std::fill(dx.begin(), dx.end(), 0.0);
    for (std::size_t i = 0; i < h; ++i) {
      const double da = dz[i] * (1.0 - z[i] * z[i]);
      gB1[i] += da;
      double* gw = gW1.data() + i * C * d;
      const double* w1 = W1.data() + i * C * d;
      for (std::size_t k = 0; k < C * d; ++k) {
        gw[k] += da * x[k];
        dx[k] += da * w1[k];
      }
    }
    for (std::size_t j = 0; j < C; ++j) {
      double* ge = gE.data() + static_cast<std::size_t>(w[j]) * d;
      for (std::size_t k = 0; k < d; ++k) ge[k] += dx[j * d + k];
    }
  }
}

std::vector<double> response_log_ratios(const PolicyParams& theta, const PolicyParams& ref,
                                        std::span<const TokenId> prompt, std::span<const TokenId> response) {
  if (response.empty()) fail(ErrorCode::EmptyResponse, "log-ratios of an empty response");
  const auto a = trace_response(theta, prompt, response);
  const auto b = trace_response(ref, prompt, response);
  std::vector<double> out(response.size());
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = a.target_log_prob(t) - b.target_log_prob(t);
  return out;
}

double kl_divergence(std::span<const double> logp, std::span<const double> logq) {
  if (logp.size() != logq.size()) fail(ErrorCode::ShapeMismatch, "distributions differ in size");
  double kl = 0.0;
  for (std::size_t v = 0; v < logp.size(); ++v) {
    const double p = std::exp(logp[v]);
    if (p > 0.0) kl += p * (logp[v] - logq[v]);
  }
  return std::max(kl, 0.0);
}

double sequential_kl(const SequenceTrace& theta, const SequenceTrace& ref) {
  if (theta.length() != ref.length()) fail(ErrorCode::ShapeMismatch, "traces differ in length");
  double total = 0.0;
  for (std::size_t t = 0; t < theta.length(); ++t) total += kl_divergence(theta.log_probs(t), ref.log_probs(t));
  return total;
}

double sequential_kl(const PolicyParams& theta, const PolicyParams& ref, std::span<const TokenId> prompt,
                     std::span<const TokenId> response) {
  return sequential_kl(trace_response(theta, prompt, response), trace_response(ref, prompt, response));
}

std::vector<TokenId> nucleus(std::span<const double> probs, double top_p) {
  std::vector<TokenId> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
    return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
  });
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    mass += probs[static_cast<std::size_t>(order[keep++])];
    if (mass >= top_p) break;
  }
  order.resize(keep);
  return order;
}

std::vector<TokenId> sample_tokens(const PolicyParams& params, std::span<const TokenId> prompt,
                                   const SamplingConfig& cfg, std::uint64_t seed) {
  if (!(cfg.temperature > 0.0)) fail(ErrorCode::InvalidArgument, "temperature must be > 0");
  if (!(cfg.top_p > 0.0 && cfg.top_p <= 1.0)) fail(ErrorCode::InvalidArgument, "top_p must be in (0, 1]");
  const auto& s = params.shape();
  for (TokenId id : prompt) check_id(id, s.vocab);

  std::mt19937_64 rng(seed);
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  std::vector<TokenId> window(s.context);
  std::vector<double> z(s.hidden), o(s.dim), logp(s.vocab), probs(s.vocab);
  std::vector<TokenId> out;
  while (out.size() < cfg.max_tokens) {
    fill_window(seq, s.context, window.data());
    forward_step(params, window.data(), z.data(), o.data(), logp.data());
    for (double& x : logp) x /= cfg.temperature;
    log_softmax(logp);
    for (std::size_t v = 0; v < s.vocab; ++v) probs[v] = std::exp(logp[v]);

    const auto kept = nucleus(probs, cfg.top_p);
    double mass = 0.0;
    for (TokenId id : kept) mass += probs[static_cast<std::size_t>(id)];
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * mass;
    TokenId next = kept.back();
    double acc = 0.0;
    for (TokenId id : kept) {
      acc += probs[static_cast<std::size_t>(id)];
      if (u < acc) {
        next = id;
        break;
      }
    }
    if (next == kEosId) break;
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

std::string sample(const PolicyParams& params, const Vocab& vocab, std::string_view prompt,
                   const SamplingConfig& cfg, std::uint64_t seed) {
  const auto ids = sample_tokens(params, vocab.encode(prompt), cfg, seed);
  return vocab.decode(ids);
}

namespace {

constexpr char kMagic[8] = {'T', 'D', 'P', 'O', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::ifstream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    fail(ErrorCode::DataError, "truncated checkpoint '" + path + "'");
  return v;
}

}  // namespace

void save_checkpoint(const PolicyParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write checkpoint '" + path + "'");
  const auto& s = params.shape();
  out.write(kMagic, sizeof kMagic);
  put(out, kVersion);
  for (std::size_t dim : {s.vocab, s.dim, s.context, s.hidden}) put(out, static_cast<std::uint32_t>(dim));
  put(out, static_cast<std::uint64_t>(params.values().size()));
  out.write(reinterpret_cast<const char*>(params.values().data()),
            static_cast<std::streamsize>(params.values().size() * sizeof(double)));
  if (!out) fail(ErrorCode::Io, "failed writing checkpoint '" + path + "'");
}

PolicyParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open checkpoint '" + path + "'");
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    fail(ErrorCode::DataError, "'" + path + "' is not a checkpoint");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion) fail(ErrorCode::DataError, "unsupported checkpoint version " + std::to_string(version));
  PolicyShape s;
  s.vocab = get<std::uint32_t>(in, path);
  s.dim = get<std::uint32_t>(in, path);
  s.context = get<std::uint32_t>(in, path);
  s.hidden = get<std::uint32_t>(in, path);
  const auto count = get<std::uint64_t>(in, path);
  PolicyParams p(s);
  if (count != p.values().size()) fail(ErrorCode::DataError, "checkpoint parameter count does not match its shape");
  if (!in.read(reinterpret_cast<char*>(p.values().data()), static_cast<std::streamsize>(count * sizeof(double))))
    fail(ErrorCode::DataError, "truncated checkpoint '" + path + "'");
  if (!p.finite()) fail(ErrorCode::DataError, "checkpoint contains non-finite parameters");
  return p;
}

}  // namespace twodpo
