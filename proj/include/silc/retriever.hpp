#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "silc/corpus.hpp"
#include "silc/linalg.hpp"
#include "silc/log.hpp"
#include "silc/optim.hpp"
#include "silc/random.hpp"
#include "silc/util.hpp"

namespace silc {

using la::DimensionMismatch;

struct EmbeddingError : std::runtime_error {
  explicit EmbeddingError(const std::string& what) : std::runtime_error(what) {}
};

struct InsufficientPairs : std::runtime_error {
  double threshold;
  InsufficientPairs(const std::string& channel, double theta)
      : std::runtime_error("no positive pairs in " + channel + " channel at threshold " + std::to_string(theta)),
        threshold(theta) {}
};

struct NonFiniteLoss : std::runtime_error {
  explicit NonFiniteLoss(const std::string& what) : std::runtime_error(what) {}
};

struct StaleIndex : std::runtime_error {
  StaleIndex(const std::string& index_tag, const std::string& model_tag)
      : std::runtime_error("index version '" + index_tag + "' does not match model version '" + model_tag + "'") {}
};

// ---------------------------------------------------------------------------
// Token embeddings
// ---------------------------------------------------------------------------

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<la::Vec> embed(const std::vector<std::string>& tokens) = 0;
};

// Test double: each token's vector is drawn from a generator seeded by the
// token text, so embeddings are deterministic, provider-local, and identical
// tokens share a vector.
class HashEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit HashEmbeddingProvider(std::size_t dim = 16, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {}

  std::size_t dim() const override { return dim_; }

  std::vector<la::Vec> embed(const std::vector<std::string>& tokens) override {
    std::vector<la::Vec> out;
    out.reserve(tokens.size());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
    for (const auto& token : tokens) {
      Rng rng(mix_seed(seed_, fnv1a64(token)));
      la::Vec v(dim_);
      for (auto& x : v) x = rng.normal() * scale;
      out.push_back(std::move(v));
    }
    return out;
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Token graph
// ---------------------------------------------------------------------------

struct TokenGraph {
  std::vector<la::Vec> node_features;          // one row per token
  std::vector<std::vector<std::size_t>> adj;   // sorted neighbor lists, self-loop included
};

// One node per token; edges connect sequential neighbors within `window`
// positions, plus a self-loop on every node. Adjacency is symmetric by
// construction.
inline TokenGraph build_graph(const Document& doc, EmbeddingProvider& provider, std::size_t window = 2) {
  const auto tokens = tokenize(doc.text, doc.lang);
  if (tokens.empty()) throw EmbeddingError("document '" + doc.id + "' has no tokens");
  std::vector<std::string> texts;
  texts.reserve(tokens.size());
  for (const auto& t : tokens) texts.push_back(t.text);
  TokenGraph g;
  g.node_features = provider.embed(texts);
  if (g.node_features.size() != tokens.size())
    throw EmbeddingError("provider returned " + std::to_string(g.node_features.size()) + " vectors for " +
                         std::to_string(tokens.size()) + " tokens");
  const std::size_t n = tokens.size();
  g.adj.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= window ? i - window : 0;
    const std::size_t hi = std::min(n - 1, i + window);
    for (std::size_t j = lo; j <= hi; ++j) g.adj[i].push_back(j);
  }
  return g;
}

// ---------------------------------------------------------------------------
// GAT layer
// ---------------------------------------------------------------------------

struct GATLayer {
  std::size_t heads = 2;
  std::size_t d_in = 0;
  std::size_t d_out = 0;  // per head; layer output is heads*d_out
  double leaky_slope = 0.2;
  std::vector<la::Matrix> W;  // per head, d_out x d_in
  std::vector<la::Vec> a;     // per head, 2*d_out
};

inline GATLayer make_gat_layer(std::size_t heads, std::size_t d_in, std::size_t d_out, Rng& rng,
                               double leaky_slope = 0.2) {
  GATLayer layer;
  layer.heads = heads;
  layer.d_in = d_in;
  layer.d_out = d_out;
  layer.leaky_slope = leaky_slope;
  const double w_bound = std::sqrt(6.0 / static_cast<double>(d_in + d_out));
  const double a_bound = std::sqrt(6.0 / static_cast<double>(2 * d_out + 1));
  for (std::size_t h = 0; h < heads; ++h) {
    la::Matrix w(d_out, d_in);
    for (auto& v : w.data) v = rng.uniform(-w_bound, w_bound);
    layer.W.push_back(std::move(w));
    la::Vec a(2 * d_out);
    for (auto& v : a) v = rng.uniform(-a_bound, a_bound);
    layer.a.push_back(std::move(a));
  }
  return layer;
}

namespace detail {

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
inline double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }
inline double leaky(double x, double slope) { return x > 0.0 ? x : slope * x; }
inline double leaky_grad(double x, double slope) { return x > 0.0 ? 1.0 : slope; }

}  // namespace detail

// Forward-pass cache; holds everything the backward pass needs.
struct GatCache {
  std::vector<std::vector<la::Vec>> u;                     // [head][node]
  std::vector<std::vector<std::vector<double>>> score_pre; // [head][node][nbr]
  std::vector<std::vector<std::vector<double>>> alpha;     // [head][node][nbr]
  std::vector<std::vector<la::Vec>> m;                     // [head][node] pre-ELU aggregate
};

// Standard graph attention: e_ij = LeakyReLU(a . [W h_i || W h_j]) over the
// neighbor list of i, alpha = softmax_j(e_ij), h'_i = ELU(sum_j alpha_ij W h_j),
// heads concatenated.
inline std::vector<la::Vec> gat_forward(const GATLayer& layer, const std::vector<la::Vec>& features,
                                        const std::vector<std::vector<std::size_t>>& adj,
                                        GatCache* cache = nullptr) {
  const std::size_t n = features.size();
  if (n != adj.size()) throw DimensionMismatch("gat_forward: features/adjacency size mismatch");
  if (n && features[0].size() != layer.d_in) throw DimensionMismatch("gat_forward: feature dim mismatch");

  std::vector<la::Vec> out(n, la::Vec(layer.heads * layer.d_out, 0.0));
  GatCache local;
  GatCache& c = cache ? *cache : local;
  c.u.assign(layer.heads, {});
  c.score_pre.assign(layer.heads, {});
  c.alpha.assign(layer.heads, {});
  c.m.assign(layer.heads, {});

  for (std::size_t h = 0; h < layer.heads; ++h) {
    auto& u = c.u[h];
    u.resize(n);
    for (std::size_t i = 0; i < n; ++i) u[i] = la::matvec(layer.W[h], features[i]);

    // Per-node attention scores s_i = a1.u_i, t_j = a2.u_j.
    la::Vec self_score(n), nbr_score(n);
    const la::Vec& a = layer.a[h];
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0, t = 0.0;
      for (std::size_t k = 0; k < layer.d_out; ++k) {
        s += a[k] * u[i][k];
        t += a[layer.d_out + k] * u[i][k];
      }
      self_score[i] = s;
      nbr_score[i] = t;
    }

    c.score_pre[h].resize(n);
    c.alpha[h].resize(n);
    c.m[h].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& nbrs = adj[i];
      auto& pre = c.score_pre[h][i];
      pre.resize(nbrs.size());
      double max_e = -std::numeric_limits<double>::infinity();
      std::vector<double> e(nbrs.size());
      for (std::size_t k = 0; k < nbrs.size(); ++k) {
        pre[k] = self_score[i] + nbr_score[nbrs[k]];
        e[k] = detail::leaky(pre[k], layer.leaky_slope);
        max_e = std::max(max_e, e[k]);
      }
      auto& alpha = c.alpha[h][i];
      alpha.resize(nbrs.size());
      double z = 0.0;
      for (std::size_t k = 0; k < nbrs.size(); ++k) {
        alpha[k] = std::exp(e[k] - max_e);
        z += alpha[k];
      }
      for (auto& v : alpha) v /= z;

      la::Vec m(layer.d_out, 0.0);
      for (std::size_t k = 0; k < nbrs.size(); ++k) la::axpy(alpha[k], u[nbrs[k]], m);
      c.m[h][i] = m;
      for (std::size_t k = 0; k < layer.d_out; ++k) out[i][h * layer.d_out + k] = detail::elu(m[k]);
    }
  }
  return out;
}

// Backward through one GAT layer. `d_out_nodes` is dL/d(output); gradients
// accumulate into dW/da and the returned d_features.
inline std::vector<la::Vec> gat_backward(const GATLayer& layer, const std::vector<la::Vec>& features,
                                         const std::vector<std::vector<std::size_t>>& adj, const GatCache& c,
                                         const std::vector<la::Vec>& d_out_nodes, std::vector<la::Matrix>& dW,
                                         std::vector<la::Vec>& da) {
  const std::size_t n = features.size();
  std::vector<la::Vec> d_features(n, la::Vec(layer.d_in, 0.0));

  for (std::size_t h = 0; h < layer.heads; ++h) {
    const auto& u = c.u[h];
    std::vector<la::Vec> du(n, la::Vec(layer.d_out, 0.0));
    const la::Vec& a = layer.a[h];

    for (std::size_t i = 0; i < n; ++i) {
      const auto& nbrs = adj[i];
      const auto& alpha = c.alpha[h][i];
      const auto& pre = c.score_pre[h][i];

      la::Vec dm(layer.d_out);
      for (std::size_t k = 0; k < layer.d_out; ++k)
        dm[k] = d_out_nodes[i][h * layer.d_out + k] * detail::elu_grad(c.m[h][i][k]);

      // m_i = sum_k alpha_k u_{nbr_k}
      std::vector<double> dalpha(nbrs.size());
      for (std::size_t k = 0; k < nbrs.size(); ++k) {
        dalpha[k] = la::dot(dm, u[nbrs[k]]);
        la::axpy(alpha[k], dm, du[nbrs[k]]);
      }
      // softmax backward
      double inner = 0.0;
      for (std::size_t k = 0; k < nbrs.size(); ++k) inner += alpha[k] * dalpha[k];
      for (std::size_t k = 0; k < nbrs.size(); ++k) {
        const double de = alpha[k] * (dalpha[k] - inner);
        const double ds = de * detail::leaky_grad(pre[k], layer.leaky_slope);
        // s_pre = a1.u_i + a2.u_j
        for (std::size_t d = 0; d < layer.d_out; ++d) {
          da[h][d] += ds * u[i][d];
          da[h][layer.d_out + d] += ds * u[nbrs[k]][d];
          du[i][d] += ds * a[d];
          du[nbrs[k]][d] += ds * a[layer.d_out + d];
        }
      }
    }

    for (std::size_t i = 0; i < n; ++i) {
      la::add_outer(dW[h], 1.0, du[i], features[i]);
      const la::Vec back = la::matvec_t(layer.W[h], du[i]);
      la::axpy(1.0, back, d_features[i]);
    }
  }
  return d_features;
}

// ---------------------------------------------------------------------------
// Retriever model: shared projection + one GAT layer per channel
// ---------------------------------------------------------------------------

struct RetrieverConfig {
  std::size_t d_model = 32;  // must be divisible by heads
  std::size_t heads = 2;
  double leaky_slope = 0.2;
  std::size_t window = 2;
};

struct RetrieverModel {
  std::size_t d_in = 0;
  std::size_t d_model = 0;
  std::size_t window = 2;
  la::Matrix proj;  // d_model x d_in, shared by both channels and h_avg
  GATLayer linguistic;
  GATLayer sentiment;
  std::uint64_t init_seed = 0;
  std::string version_tag;
};

template <typename Model, typename F>
void for_each_param(Model& model, F&& f) {
  for (auto& v : model.proj.data) f(v);
  for (auto* layer : {&model.linguistic, &model.sentiment}) {
    for (auto& w : layer->W)
      for (auto& v : w.data) f(v);
    for (auto& a : layer->a)
      for (auto& v : a) f(v);
  }
}

inline std::size_t param_count(const RetrieverModel& m) {
  std::size_t n = 0;
  for_each_param(const_cast<RetrieverModel&>(m), [&](double&) { ++n; });
  return n;
}

inline la::Vec flatten_params(const RetrieverModel& m) {
  la::Vec out;
  out.reserve(param_count(m));
  for_each_param(const_cast<RetrieverModel&>(m), [&](double& v) { out.push_back(v); });
  return out;
}

inline void unflatten_params(RetrieverModel& m, const la::Vec& flat) {
  std::size_t i = 0;
  for_each_param(m, [&](double& v) { v = flat[i++]; });
  if (i != flat.size()) throw DimensionMismatch("unflatten_params: size mismatch");
}

inline std::string compute_version_tag(const RetrieverModel& m) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for_each_param(const_cast<RetrieverModel&>(m), [&](double& v) {
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&v), sizeof(double)), h);
  });
  return to_hex(h);
}

inline RetrieverModel make_retriever_model(std::size_t d_in, const RetrieverConfig& cfg, std::uint64_t seed) {
  if (cfg.d_model % cfg.heads != 0)
    throw std::invalid_argument("d_model must be divisible by the head count");
  RetrieverModel m;
  m.d_in = d_in;
  m.d_model = cfg.d_model;
  m.window = cfg.window;
  m.init_seed = seed;
  Rng rng(mix_seed(seed, 0x6a11));
  const double bound = std::sqrt(6.0 / static_cast<double>(d_in + cfg.d_model));
  m.proj = la::Matrix(cfg.d_model, d_in);
  for (auto& v : m.proj.data) v = rng.uniform(-bound, bound);
  const std::size_t d_out = cfg.d_model / cfg.heads;
  m.linguistic = make_gat_layer(cfg.heads, cfg.d_model, d_out, rng, cfg.leaky_slope);
  m.sentiment = make_gat_layer(cfg.heads, cfg.d_model, d_out, rng, cfg.leaky_slope);
  m.version_tag = compute_version_tag(m);
  return m;
}

// The three vectors produced for one document: per-channel GAT pooling plus
// the pooled pre-GAT projection ("average" channel); all unit length.
struct EncodedExample {
  std::string doc_id;
  la::Vec h_lig;
  la::Vec h_sen;
  la::Vec h_avg;
};

struct ChannelState {
  GatCache gat;
  std::vector<la::Vec> y;
  la::Vec pooled;
  double pooled_norm = 0.0;
  la::Vec unit;
};

struct ModelForward {
  std::vector<la::Vec> z;  // projected inputs
  ChannelState lig;
  ChannelState sen;
  la::Vec avg_pooled;
  la::Vec h_avg;
};

namespace detail {

inline void pool_and_normalize(const std::vector<la::Vec>& rows, la::Vec& pooled, double& pooled_norm,
                               la::Vec& unit) {
  const std::size_t n = rows.size();
  pooled.assign(rows[0].size(), 0.0);
  for (const auto& r : rows) la::axpy(1.0 / static_cast<double>(n), r, pooled);
  pooled_norm = la::norm(pooled);
  unit = pooled;
  if (pooled_norm > 0.0) la::scale(unit, 1.0 / pooled_norm);
}

// d(unit)/d(pooled) applied to upstream gradient: (g - unit*(unit.g)) / norm.
inline la::Vec normalize_backward(const la::Vec& unit, double pooled_norm, const la::Vec& d_unit) {
  la::Vec d_pooled(d_unit.size(), 0.0);
  if (pooled_norm <= 0.0) return d_pooled;
  const double proj = la::dot(unit, d_unit);
  for (std::size_t i = 0; i < d_unit.size(); ++i) d_pooled[i] = (d_unit[i] - unit[i] * proj) / pooled_norm;
  return d_pooled;
}

}  // namespace detail

inline void model_forward(const RetrieverModel& model, const TokenGraph& graph, ModelForward& fw) {
  const std::size_t n = graph.node_features.size();
  if (n == 0) throw EmbeddingError("cannot encode an empty graph");
  fw.z.resize(n);
  for (std::size_t i = 0; i < n; ++i) fw.z[i] = la::matvec(model.proj, graph.node_features[i]);

  fw.lig.y = gat_forward(model.linguistic, fw.z, graph.adj, &fw.lig.gat);
  detail::pool_and_normalize(fw.lig.y, fw.lig.pooled, fw.lig.pooled_norm, fw.lig.unit);
  fw.sen.y = gat_forward(model.sentiment, fw.z, graph.adj, &fw.sen.gat);
  detail::pool_and_normalize(fw.sen.y, fw.sen.pooled, fw.sen.pooled_norm, fw.sen.unit);

  double avg_norm = 0.0;
  detail::pool_and_normalize(fw.z, fw.avg_pooled, avg_norm, fw.h_avg);
}

// Accumulates parameter gradients for dL/d(unit vector) of each channel.
// Either gradient may be empty (treated as zero).
inline void model_backward(const RetrieverModel& model, const TokenGraph& graph, const ModelForward& fw,
                           const la::Vec& d_unit_lig, const la::Vec& d_unit_sen, RetrieverModel& grads) {
  const std::size_t n = graph.node_features.size();
  std::vector<la::Vec> dz(n, la::Vec(model.d_model, 0.0));

  auto run_channel = [&](const GATLayer& layer, const ChannelState& state, const la::Vec& d_unit,
                         std::vector<la::Matrix>& dW, std::vector<la::Vec>& da) {
    if (d_unit.empty()) return;
    const la::Vec d_pooled = detail::normalize_backward(state.unit, state.pooled_norm, d_unit);
    std::vector<la::Vec> d_nodes(n, la::Vec(d_pooled.size(), 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d_pooled.size(); ++k) d_nodes[i][k] = d_pooled[k] / static_cast<double>(n);
    const auto d_feat = gat_backward(layer, fw.z, graph.adj, state.gat, d_nodes, dW, da);
    for (std::size_t i = 0; i < n; ++i) la::axpy(1.0, d_feat[i], dz[i]);
  };

  run_channel(model.linguistic, fw.lig, d_unit_lig, grads.linguistic.W, grads.linguistic.a);
  run_channel(model.sentiment, fw.sen, d_unit_sen, grads.sentiment.W, grads.sentiment.a);

  for (std::size_t i = 0; i < n; ++i) la::add_outer(grads.proj, 1.0, dz[i], graph.node_features[i]);
}

inline RetrieverModel zero_grads_like(const RetrieverModel& m) {
  RetrieverModel g = m;
  for_each_param(g, [](double& v) { v = 0.0; });
  return g;
}

inline EncodedExample encode(const RetrieverModel& model, const Document& doc, EmbeddingProvider& provider) {
  const TokenGraph graph = build_graph(doc, provider, model.window);
  ModelForward fw;
  model_forward(model, graph, fw);
  return {doc.id, fw.lig.unit, fw.sen.unit, fw.h_avg};
}

// ---------------------------------------------------------------------------
// Heuristic similarity rules
// ---------------------------------------------------------------------------

enum class PosTag : std::size_t { Nounish = 0, Verbish = 1, Func = 2, Num = 3, Punct = 4, Other = 5 };

namespace detail {

inline const std::set<std::string>& en_function_words() {
  static const std::set<std::string> words = {
      "the",   "a",     "an",    "this",  "that",   "these", "those",  "and",   "or",      "but",
      "nor",   "so",    "yet",   "of",    "in",     "on",    "at",     "to",    "for",     "with",
      "by",    "from",  "as",    "into",  "over",   "under", "about",  "after", "before",  "between",
      "during", "against", "amid", "is",  "are",    "was",   "were",   "be",    "been",    "being",
      "am",    "it",    "its",   "he",    "she",    "they",  "we",     "i",     "you",     "his",
      "her",   "their", "our",   "your",  "my",     "not",   "no",     "will",  "would",   "can",
      "could", "may",   "might", "shall", "should", "must",  "do",     "does",  "did",     "has",
      "have",  "had",   "than",  "then",  "there",  "here",  "which",  "who",   "when",    "where",
      "why",   "how",   "if",    "while", "until",  "up",    "down",   "out",   "off",     "per"};
  return words;
}

inline const std::set<std::string>& en_verb_words() {
  static const std::set<std::string> words = {
      "gain",  "gains",  "fall",   "falls",  "fell",   "rise",  "rises",  "rose",   "say",    "says",
      "said",  "surge",  "surges", "drop",   "drops",  "jump",  "jumps",  "slip",   "slips",  "slide",
      "slides", "slid",  "lead",   "leads",  "led",    "cut",   "cuts",   "raise",  "raises", "beat",
      "beats", "miss",   "misses", "post",   "posts",  "sell",  "sells",  "sold",   "buy",    "buys",
      "bought", "climb", "climbs", "sink",   "sinks",  "sank",  "plunge", "plunges", "soar",  "soars",
      "expect", "expects", "see",  "sees",   "saw",    "seen",  "warn",   "warns",  "win",    "wins",
      "won",   "lose",   "loses",  "lost",   "add",    "adds",  "name",   "names",  "report", "reports"};
  return words;
}

inline const std::set<char32_t>& zh_function_chars() {
  static const std::set<char32_t> chars = [] {
    std::set<char32_t> s;
    for (char32_t c : utf8_decode("的了是在和与及或将为对不也都被把于等该其已再仍又并而且各每经向从之"))
      s.insert(c);
    return s;
  }();
  return chars;
}

inline const std::set<char32_t>& zh_verb_chars() {
  static const std::set<char32_t> chars = [] {
    std::set<char32_t> s;
    for (char32_t c : utf8_decode("涨跌升降增减买卖购售发布报称收盈亏涉罚控持投露予告启动录得需求"))
      s.insert(c);
    return s;
  }();
  return chars;
}

inline bool all_ascii_punct(const std::string& token) {
  for (unsigned char c : token)
    if (!std::ispunct(c)) return false;
  return !token.empty();
}

}  // namespace detail

// Coarse lexicon/rule tagger. English tokens go through a closed-class
// lexicon plus suffix rules; Chinese tokens (single code points) are tagged
// by character class. Deterministic and dependency-free; thresholds are
// config so a real tagger can be substituted upstream.
inline PosTag pos_tag(const std::string& token, Lang lang) {
  if (lang == Lang::Zh) {
    const std::u32string cps = utf8_decode(token);
    if (cps.empty()) return PosTag::Other;
    const char32_t c = cps[0];
    if (c >= U'0' && c <= U'9') return PosTag::Num;
    if (c >= 0xFF10 && c <= 0xFF19) return PosTag::Num;
    if (is_cjk_punct(c) || (c < 0x80 && std::ispunct(static_cast<unsigned char>(c)))) return PosTag::Punct;
    if (detail::zh_function_chars().count(c)) return PosTag::Func;
    if (detail::zh_verb_chars().count(c)) return PosTag::Verbish;
    if (is_cjk(c)) return PosTag::Nounish;
    return PosTag::Other;
  }
  if (detail::all_ascii_punct(token)) return PosTag::Punct;
  for (unsigned char c : token)
    if (std::isdigit(c)) return PosTag::Num;
  const std::string low = lower_ascii(token);
  if (detail::en_function_words().count(low)) return PosTag::Func;
  if (detail::en_verb_words().count(low)) return PosTag::Verbish;
  if (low.size() > 4 && (low.ends_with("ed") || low.ends_with("ing"))) return PosTag::Verbish;
  if (std::isalpha(static_cast<unsigned char>(token[0]))) return PosTag::Nounish;
  return PosTag::Other;
}

namespace detail {

constexpr std::size_t kTagCount = 6;
constexpr std::size_t kBos = kTagCount;      // sentinel tags for bigram padding
constexpr std::size_t kEos = kTagCount + 1;
constexpr std::size_t kBigramDim = (kTagCount + 2) * (kTagCount + 2);

// POS-bigram count vector with BOS/EOS sentinels, so even one-token
// documents produce a nonzero vector.
inline la::Vec pos_bigram_vector(const Document& doc) {
  const auto tokens = tokenize(doc.text, doc.lang);
  la::Vec v(kBigramDim, 0.0);
  if (tokens.empty()) return v;
  std::vector<std::size_t> tags;
  tags.push_back(kBos);
  for (const auto& t : tokens) tags.push_back(static_cast<std::size_t>(pos_tag(t.text, doc.lang)));
  tags.push_back(kEos);
  for (std::size_t i = 0; i + 1 < tags.size(); ++i) v[tags[i] * (kTagCount + 2) + tags[i + 1]] += 1.0;
  return v;
}

inline la::Vec polarity_count_vector(const Document& doc) {
  la::Vec v(kPolarityCount, 0.0);
  for (const auto& e : doc.entities) v[static_cast<std::size_t>(e.sentiment)] += 1.0;
  return v;
}

}  // namespace detail

// Cosine similarity of coarse POS-bigram frequency vectors. Symmetric,
// bounded in [0,1] (counts are non-negative), 1 on identical nonempty
// documents, 0 when either document is empty.
inline double linguistic_similarity(const Document& a, const Document& b) {
  return la::cosine(detail::pos_bigram_vector(a), detail::pos_bigram_vector(b));
}

// Cosine similarity of 3-dim polarity count vectors over gold entities;
// documents with no entities compare as 0 to everything.
inline double sentiment_similarity(const Document& a, const Document& b) {
  return la::cosine(detail::polarity_count_vector(a), detail::polarity_count_vector(b));
}

// ---------------------------------------------------------------------------
// Contrastive pair construction
// ---------------------------------------------------------------------------

struct SimilarityRules {
  double theta_lig = 0.37;
  double theta_sen = 0.8;
};

// Per-dataset thresholds; loadable from config, these are the defaults.
inline std::optional<SimilarityRules> default_rules_for(const std::string& dataset_name) {
  const std::string n = lower_ascii(dataset_name);
  if (n == "finentity") return SimilarityRules{0.37, 0.8};
  if (n == "sentfin-span" || n == "sentfin") return SimilarityRules{0.46, 0.8};
  if (n == "finentcn" || n == "efsa") return SimilarityRules{0.15, 0.7};
  return std::nullopt;
}

using DocPair = std::pair<std::size_t, std::size_t>;

struct PairSets {
  std::vector<DocPair> positives;
  std::vector<DocPair> negatives;
};

struct ChannelPairs {
  PairSets linguistic;
  PairSets sentiment;
};

struct PairConfig {
  std::size_t max_pairs_per_channel = 512;   // cap on positives; negatives sized to match
  std::size_t max_candidate_pairs = 200000;  // cap on enumerated candidates for large corpora
};

// Positive pairs are those at or above the channel threshold; negatives are
// a seeded equal-size sample from below it. Candidate pairs are fully
// enumerated up to max_candidate_pairs and sampled beyond that.
inline ChannelPairs make_pairs(const Dataset& train, const SimilarityRules& rules, std::uint64_t seed,
                               const PairConfig& cfg = {}) {
  const std::size_t n = train.size();
  if (n < 2) throw InsufficientPairs("linguistic", rules.theta_lig);

  std::vector<la::Vec> lig_vecs(n), sen_vecs(n);
  for (std::size_t i = 0; i < n; ++i) {
    lig_vecs[i] = detail::pos_bigram_vector(train[i]);
    sen_vecs[i] = detail::polarity_count_vector(train[i]);
  }

  std::vector<DocPair> candidates;
  const std::size_t total = n * (n - 1) / 2;
  if (total <= cfg.max_candidate_pairs) {
    candidates.reserve(total);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) candidates.emplace_back(i, j);
  } else {
    Rng rng(mix_seed(seed, 0xca9d));
    std::set<DocPair> picked;
    while (picked.size() < cfg.max_candidate_pairs) {
      std::size_t i = rng.below(n), j = rng.below(n);
      if (i == j) continue;
      picked.insert({std::min(i, j), std::max(i, j)});
    }
    candidates.assign(picked.begin(), picked.end());
  }

  auto build_channel = [&](const std::vector<la::Vec>& vecs, double theta, const char* name,
                           std::uint64_t salt) {
    PairSets sets;
    std::vector<DocPair> below;
    for (const auto& [i, j] : candidates) {
      const double sim = la::cosine(vecs[i], vecs[j]);
      if (sim >= theta)
        sets.positives.push_back({i, j});
      else
        below.push_back({i, j});
    }
    if (sets.positives.empty()) throw InsufficientPairs(name, theta);
    Rng rng(mix_seed(seed, salt));
    if (sets.positives.size() > cfg.max_pairs_per_channel) {
      rng.shuffle(sets.positives);
      sets.positives.resize(cfg.max_pairs_per_channel);
    }
    rng.shuffle(below);
    below.resize(std::min(below.size(), sets.positives.size()));
    sets.negatives = std::move(below);
    return sets;
  };

  ChannelPairs pairs;
  pairs.linguistic = build_channel(lig_vecs, rules.theta_lig, "linguistic", 0x11a0);
  pairs.sentiment = build_channel(sen_vecs, rules.theta_sen, "sentiment", 0x5e22);
  return pairs;
}

// ---------------------------------------------------------------------------
// Contrastive training
// ---------------------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 1e-4;
  int epochs = 10;
  std::size_t batch_pairs = 16;
  double temperature = 0.1;
  std::uint64_t seed = 0;
  double holdout_fraction = 0.2;
  double weight_decay = 0.01;
  PairConfig pair_config;
};

// Normalized-temperature cross-entropy over a batch of (anchor, positive)
// pairs with in-batch negatives: for anchors u_k and positives v_l,
// L = -(1/B) sum_k log( exp(u_k.v_k/tau) / sum_l exp(u_k.v_l/tau) ).
// Per-channel losses are computed on that channel's pooled representation
// and summed with equal weight; gradients accumulate into `grads`.
inline double contrastive_loss_and_grad(const RetrieverModel& model,
                                        const std::vector<const TokenGraph*>& graphs,
                                        const std::vector<DocPair>& lig_batch,
                                        const std::vector<DocPair>& sen_batch, double temperature,
                                        RetrieverModel& grads) {
  // Forward every document that participates in this step, once.
  std::map<std::size_t, ModelForward> forwards;
  auto ensure_forward = [&](std::size_t doc) -> ModelForward& {
    auto it = forwards.find(doc);
    if (it == forwards.end()) {
      it = forwards.emplace(doc, ModelForward{}).first;
      model_forward(model, *graphs[doc], it->second);
    }
    return it->second;
  };

  std::map<std::size_t, la::Vec> d_unit_lig, d_unit_sen;
  double loss = 0.0;

  auto run_channel = [&](const std::vector<DocPair>& batch, bool lig) {
    if (batch.empty()) return;
    const std::size_t b = batch.size();
    std::vector<const la::Vec*> u(b), v(b);
    for (std::size_t k = 0; k < b; ++k) {
      auto& fa = ensure_forward(batch[k].first);
      auto& fp = ensure_forward(batch[k].second);
      u[k] = lig ? &fa.lig.unit : &fa.sen.unit;
      v[k] = lig ? &fp.lig.unit : &fp.sen.unit;
    }
    // S_kl = u_k . v_l / tau, row-wise softmax.
    std::vector<std::vector<double>> s(b, std::vector<double>(b));
    for (std::size_t k = 0; k < b; ++k)
      for (std::size_t l = 0; l < b; ++l) s[k][l] = la::dot(*u[k], *v[l]) / temperature;

    auto& d_units = lig ? d_unit_lig : d_unit_sen;
    const std::size_t dim = u[0]->size();
    auto accum = [&](std::size_t doc, const la::Vec& g) {
      auto [it, inserted] = d_units.try_emplace(doc, la::Vec(dim, 0.0));
      la::axpy(1.0, g, it->second);
    };

    for (std::size_t k = 0; k < b; ++k) {
      double max_s = *std::max_element(s[k].begin(), s[k].end());
      double z = 0.0;
      for (std::size_t l = 0; l < b; ++l) z += std::exp(s[k][l] - max_s);
      loss += (std::log(z) + max_s - s[k][k]) / static_cast<double>(b);

      la::Vec du(dim, 0.0);
      for (std::size_t l = 0; l < b; ++l) {
        const double p = std::exp(s[k][l] - max_s) / z;
        const double ds = (p - (k == l ? 1.0 : 0.0)) / (static_cast<double>(b) * temperature);
        la::axpy(ds, *v[l], du);
        la::Vec dv(dim, 0.0);
        la::axpy(ds, *u[k], dv);
        accum(batch[l].second, dv);
      }
      accum(batch[k].first, du);
    }
  };

  run_channel(lig_batch, true);
  run_channel(sen_batch, false);

  static const la::Vec kEmpty;
  for (const auto& [doc, fw] : forwards) {
    const auto lit = d_unit_lig.find(doc);
    const auto sit = d_unit_sen.find(doc);
    model_backward(model, *graphs[doc], fw, lit == d_unit_lig.end() ? kEmpty : lit->second,
                   sit == d_unit_sen.end() ? kEmpty : sit->second, grads);
  }
  return loss;
}

struct TrainResult {
  std::vector<double> loss_trace;  // mean loss per epoch
  ChannelPairs train_pairs;
  ChannelPairs heldout_pairs;
};

namespace detail {

inline void split_holdout(PairSets& sets, PairSets& heldout, double fraction, Rng& rng) {
  auto carve = [&](std::vector<DocPair>& from, std::vector<DocPair>& to) {
    rng.shuffle(from);
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(from.size())));
    to.assign(from.end() - static_cast<std::ptrdiff_t>(k), from.end());
    from.resize(from.size() - k);
  };
  carve(sets.positives, heldout.positives);
  carve(sets.negatives, heldout.negatives);
}

}  // namespace detail

// Trains both channels with AdamW. Deterministic given the seed: pair
// construction, holdout carving, batch order and parameter updates all draw
// from seeded generators.
inline TrainResult contrastive_train(RetrieverModel& model, const Dataset& train, EmbeddingProvider& provider,
                                     const SimilarityRules& rules, const TrainConfig& config) {
  TrainResult result;
  result.train_pairs = make_pairs(train, rules, config.seed, config.pair_config);
  Rng holdout_rng(mix_seed(config.seed, 0x40ff));
  detail::split_holdout(result.train_pairs.linguistic, result.heldout_pairs.linguistic,
                        config.holdout_fraction, holdout_rng);
  detail::split_holdout(result.train_pairs.sentiment, result.heldout_pairs.sentiment, config.holdout_fraction,
                        holdout_rng);
  if (result.train_pairs.linguistic.positives.empty())
    throw InsufficientPairs("linguistic", rules.theta_lig);
  if (result.train_pairs.sentiment.positives.empty())
    throw InsufficientPairs("sentiment", rules.theta_sen);

  // Embeddings are fixed during training; build every graph once.
  std::vector<TokenGraph> graphs;
  graphs.reserve(train.size());
  for (const auto& doc : train) graphs.push_back(build_graph(doc, provider, model.window));
  std::vector<const TokenGraph*> graph_ptrs;
  for (const auto& g : graphs) graph_ptrs.push_back(&g);

  AdamW opt;
  opt.lr = config.learning_rate;
  opt.weight_decay = config.weight_decay;
  la::Vec params = flatten_params(model);

  auto lig_pos = result.train_pairs.linguistic.positives;
  auto sen_pos = result.train_pairs.sentiment.positives;
  const std::size_t batch = std::max<std::size_t>(1, config.batch_pairs);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng epoch_rng(mix_seed(config.seed, 0xe90c + static_cast<std::uint64_t>(epoch)));
    epoch_rng.shuffle(lig_pos);
    epoch_rng.shuffle(sen_pos);
    const std::size_t steps =
        (std::max(lig_pos.size(), sen_pos.size()) + batch - 1) / batch;
    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      auto slice = [&](const std::vector<DocPair>& pool) {
        std::vector<DocPair> out;
        if (pool.empty()) return out;
        for (std::size_t k = 0; k < batch; ++k) out.push_back(pool[(step * batch + k) % pool.size()]);
        return out;
      };
      RetrieverModel grads = zero_grads_like(model);
      const double loss =
          contrastive_loss_and_grad(model, graph_ptrs, slice(lig_pos), slice(sen_pos), config.temperature, grads);
      if (!std::isfinite(loss))
        throw NonFiniteLoss("epoch " + std::to_string(epoch) + " step " + std::to_string(step) + ": loss " +
                            std::to_string(loss));
      epoch_loss += loss / static_cast<double>(steps);
      if (config.learning_rate > 0.0) {
        const la::Vec grad_flat = flatten_params(grads);
        opt.step(params, grad_flat);
        unflatten_params(model, params);
      }
    }
    result.loss_trace.push_back(epoch_loss);
  }
  model.version_tag = compute_version_tag(model);
  return result;
}

// Fraction of held-out positive pairs whose cosine (in the channel's trained
// representation) exceeds the mean cosine of held-out negative pairs.
struct SeparationReport {
  double positive_mean = 0.0;
  double negative_mean = 0.0;
  double fraction_above_negative_mean = 0.0;
};

inline SeparationReport channel_separation(const RetrieverModel& model, const Dataset& docs,
                                           EmbeddingProvider& provider, const PairSets& pairs, bool linguistic) {
  std::map<std::size_t, la::Vec> units;
  auto unit_of = [&](std::size_t i) -> const la::Vec& {
    auto it = units.find(i);
    if (it == units.end()) {
      EncodedExample enc = encode(model, docs[i], provider);
      it = units.emplace(i, linguistic ? enc.h_lig : enc.h_sen).first;
    }
    return it->second;
  };
  SeparationReport rep;
  if (pairs.positives.empty() || pairs.negatives.empty()) return rep;
  std::vector<double> pos_cos;
  for (const auto& [i, j] : pairs.positives) pos_cos.push_back(la::dot(unit_of(i), unit_of(j)));
  double neg_sum = 0.0;
  for (const auto& [i, j] : pairs.negatives) neg_sum += la::dot(unit_of(i), unit_of(j));
  rep.negative_mean = neg_sum / static_cast<double>(pairs.negatives.size());
  double above = 0.0, pos_sum = 0.0;
  for (double c : pos_cos) {
    pos_sum += c;
    if (c > rep.negative_mean) above += 1.0;
  }
  rep.positive_mean = pos_sum / static_cast<double>(pos_cos.size());
  rep.fraction_above_negative_mean = above / static_cast<double>(pos_cos.size());
  return rep;
}

// ---------------------------------------------------------------------------
// Index and retrieval
// ---------------------------------------------------------------------------

enum class Channel : std::size_t { Linguistic = 0, Sentiment = 1, Average = 2 };

struct SearchHit {
  std::string doc_id;
  double score = 0.0;
};

// Exact cosine-scan index over the three channel representations. Intended
// scale is <= ~15k vectors, where a full scan is immediate.
class Index {
 public:
  Index() = default;
  Index(std::string version_tag, const std::vector<EncodedExample>& encoded)
      : version_tag_(std::move(version_tag)) {
    for (const auto& e : encoded) {
      ids_.push_back(e.doc_id);
      vecs_[0].push_back(e.h_lig);
      vecs_[1].push_back(e.h_sen);
      vecs_[2].push_back(e.h_avg);
    }
  }

  const std::string& version_tag() const { return version_tag_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<la::Vec>& vectors(Channel c) const { return vecs_[static_cast<std::size_t>(c)]; }

  // Top-m by cosine, ties broken toward the lexicographically smaller id.
  std::vector<SearchHit> search(Channel channel, const la::Vec& query, std::size_t m,
                                const std::string& exclude_id = {}) const {
    const auto& vecs = vecs_[static_cast<std::size_t>(channel)];
    std::vector<SearchHit> hits;
    hits.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (ids_[i] == exclude_id) continue;
      hits.push_back({ids_[i], la::dot(query, vecs[i])});
    }
    std::sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.doc_id < b.doc_id;
    });
    if (hits.size() > m) hits.resize(m);
    return hits;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["version_tag"] = version_tag_;
    j["ids"] = ids_;
    j["linguistic"] = vecs_[0];
    j["sentiment"] = vecs_[1];
    j["average"] = vecs_[2];
    return j;
  }

  static Index from_json(const nlohmann::json& j) {
    Index idx;
    idx.version_tag_ = j.at("version_tag").get<std::string>();
    idx.ids_ = j.at("ids").get<std::vector<std::string>>();
    idx.vecs_[0] = j.at("linguistic").get<std::vector<la::Vec>>();
    idx.vecs_[1] = j.at("sentiment").get<std::vector<la::Vec>>();
    idx.vecs_[2] = j.at("average").get<std::vector<la::Vec>>();
    return idx;
  }

 private:
  std::string version_tag_;
  std::vector<std::string> ids_;
  std::vector<la::Vec> vecs_[3];
};

inline Index build_index(const std::vector<EncodedExample>& encoded, const std::string& version_tag) {
  if (encoded.empty()) throw std::invalid_argument("cannot build an index over zero examples");
  return Index(version_tag, encoded);
}

inline std::vector<EncodedExample> encode_dataset(const RetrieverModel& model, const Dataset& docs,
                                                  EmbeddingProvider& provider) {
  std::vector<EncodedExample> out;
  out.reserve(docs.size());
  for (const auto& doc : docs) out.push_back(encode(model, doc, provider));
  return out;
}

// Optional approximate drop-in: greedy best-first search over a k-NN
// neighborhood graph built by exact scan. Must agree with the exact index on
// >= 99% of top-1 queries.
class ApproxIndex {
 public:
  ApproxIndex() = default;

  static ApproxIndex build(const Index& exact, std::size_t graph_degree = 16, std::size_t n_entries = 4,
                           std::uint64_t seed = 0) {
    ApproxIndex out;
    out.exact_ = &exact;
    out.degree_ = graph_degree;
    const std::size_t n = exact.size();
    Rng rng(mix_seed(seed, 0xa991));
    out.entries_.push_back(0);
    for (std::size_t k = 1; k < std::min(n_entries, n); ++k) out.entries_.push_back(rng.below(n));
    for (std::size_t c = 0; c < 3; ++c) {
      const auto& vecs = exact.vectors(static_cast<Channel>(c));
      auto& graph = out.graph_[c];
      graph.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, std::size_t>> scored;
        scored.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j)
          if (j != i) scored.push_back({la::dot(vecs[i], vecs[j]), j});
        const std::size_t k = std::min(graph_degree, scored.size());
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                          [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::size_t t = 0; t < k; ++t) graph[i].push_back(scored[t].second);
      }
    }
    return out;
  }

  std::optional<SearchHit> search_top1(Channel channel, const la::Vec& query,
                                       const std::string& exclude_id = {}) const {
    const auto& vecs = exact_->vectors(channel);
    const auto& ids = exact_->ids();
    const auto& graph = graph_[static_cast<std::size_t>(channel)];
    if (ids.empty()) return std::nullopt;

    std::set<std::size_t> visited;
    // Max-heap of frontier candidates by score.
    std::vector<std::pair<double, std::size_t>> frontier;
    auto push = [&](std::size_t i) {
      if (visited.insert(i).second) frontier.push_back({la::dot(query, vecs[i]), i});
    };
    for (std::size_t e : entries_) push(e);

    std::optional<std::pair<double, std::size_t>> best;
    std::size_t stale = 0;
    const std::size_t patience = std::max<std::size_t>(24, degree_);
    while (!frontier.empty() && stale < patience) {
      auto top = std::max_element(frontier.begin(), frontier.end());
      const auto [score, node] = *top;
      frontier.erase(top);
      const bool excluded = ids[node] == exclude_id;
      const bool improves =
          !best || score > best->first ||
          (score == best->first && !excluded && ids[node] < ids[best->second]);
      if (!excluded && improves)
        best = {score, node};
      else
        ++stale;
      for (std::size_t nbr : graph[node]) push(nbr);
    }
    if (!best) return std::nullopt;
    return SearchHit{ids[best->second], best->first};
  }

 private:
  const Index* exact_ = nullptr;
  std::size_t degree_ = 16;
  std::vector<std::size_t> entries_;
  std::vector<std::vector<std::size_t>> graph_[3];
};

struct Retrieval {
  std::optional<SearchHit> linguistic;
  std::optional<SearchHit> sentiment;
  std::optional<SearchHit> average;
};

// Encodes the query and returns the nearest stored example per channel,
// excluding the query document itself. The index must have been built with
// the same model version.
inline Retrieval retrieve(const Index& index, const RetrieverModel& model, const Document& query_doc,
                          EmbeddingProvider& provider) {
  if (index.version_tag() != model.version_tag) throw StaleIndex(index.version_tag(), model.version_tag);
  const EncodedExample q = encode(model, query_doc, provider);
  Retrieval out;
  auto top1 = [&](Channel c, const la::Vec& v) -> std::optional<SearchHit> {
    auto hits = index.search(c, v, 1, query_doc.id);
    if (hits.empty()) return std::nullopt;
    return hits[0];
  };
  out.linguistic = top1(Channel::Linguistic, q.h_lig);
  out.sentiment = top1(Channel::Sentiment, q.h_sen);
  out.average = top1(Channel::Average, q.h_avg);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization
// ---------------------------------------------------------------------------

inline nlohmann::json model_to_json(const RetrieverModel& m) {
  return {{"d_in", m.d_in},
          {"d_model", m.d_model},
          {"window", m.window},
          {"heads", m.linguistic.heads},
          {"leaky_slope", m.linguistic.leaky_slope},
          {"init_seed", m.init_seed},
          {"version_tag", m.version_tag},
          {"params", flatten_params(m)}};
}

inline RetrieverModel model_from_json(const nlohmann::json& j) {
  RetrieverConfig cfg;
  cfg.d_model = j.at("d_model").get<std::size_t>();
  cfg.heads = j.at("heads").get<std::size_t>();
  cfg.leaky_slope = j.value("leaky_slope", 0.2);
  cfg.window = j.value("window", std::size_t{2});
  RetrieverModel m = make_retriever_model(j.at("d_in").get<std::size_t>(), cfg, j.value("init_seed", 0ull));
  unflatten_params(m, j.at("params").get<la::Vec>());
  m.version_tag = j.at("version_tag").get<std::string>();
  const std::string recomputed = compute_version_tag(m);
  if (recomputed != m.version_tag)
    throw std::runtime_error("checkpoint version tag mismatch (corrupt or edited file)");
  return m;
}

}  // namespace silc
