#pragma once

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "samcnet/knn.hpp"
#include "samcnet/lrfc.hpp"
#include "samcnet/metrics.hpp"
#include "samcnet/pointset.hpp"
#include "samcnet/tensor.hpp"

// SAMCNet: EdgeConv layers on dynamic k-NN graphs with a category-pair
// prioritization sub-network, trained with Adam + cross-entropy. Layer 1
// builds its graph in coordinate space and encodes edges with the LRFC
// relative encoding; later layers rebuild the graph in the embedding space of
// the previous layer.

namespace samcnet {

enum class PrioritizationMode { kNone, kSelf, kNeighbor, kSelfNeighbor, kPair };
enum class HeadAggregation { kAverage, kConcat };

inline std::string to_string(PrioritizationMode m) {
  switch (m) {
    case PrioritizationMode::kNone: return "none";
    case PrioritizationMode::kSelf: return "self";
    case PrioritizationMode::kNeighbor: return "neighbor";
    case PrioritizationMode::kSelfNeighbor: return "self_neighbor";
    case PrioritizationMode::kPair: return "pair";
  }
  throw std::invalid_argument("bad prioritization mode");
}

inline PrioritizationMode prioritization_from_string(const std::string& s) {
  if (s == "none") return PrioritizationMode::kNone;
  if (s == "self") return PrioritizationMode::kSelf;
  if (s == "neighbor") return PrioritizationMode::kNeighbor;
  if (s == "self_neighbor") return PrioritizationMode::kSelfNeighbor;
  if (s == "pair") return PrioritizationMode::kPair;
  throw std::invalid_argument("unknown prioritization mode '" + s + "'");
}

struct ModelConfig {
  std::size_t k = 6;
  std::vector<std::size_t> layer_widths{64, 64, 128, 256};
  std::size_t emb_dims = 1024;
  std::vector<std::size_t> head_widths{512, 256};
  std::size_t heads = 1;
  HeadAggregation head_agg = HeadAggregation::kAverage;
  double dropout = 0.5;
  std::size_t top_k_prime = 0;  // 0 disables top-k' pooling
  bool use_lrfc = true;
  PrioritizationMode prioritization = PrioritizationMode::kPair;
  LrfcConfig lrfc;
  double leaky_slope = 0.2;

  std::size_t epochs = 200;
  std::size_t batch_size = 7;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::size_t num_points = 1024;
  std::size_t augment_rotations = 5;

  // Bound to a dataset at training time.
  std::size_t num_categories = 0;
  std::size_t num_classes = 0;
  std::vector<std::string> category_names;
  std::vector<std::string> class_names;

  void validate() const {
    if (layer_widths.empty()) throw std::invalid_argument("config: no layer widths");
    for (const std::size_t w : layer_widths)
      if (w == 0) throw std::invalid_argument("config: zero layer width");
    if (emb_dims == 0) throw std::invalid_argument("config: emb_dims must be positive");
    if (heads < 1) throw std::invalid_argument("config: heads must be >= 1");
    if (top_k_prime > k) throw std::invalid_argument("config: top_k_prime must be <= k");
    if (!(dropout >= 0.0 && dropout < 1.0))
      throw std::invalid_argument("config: dropout must be in [0,1)");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    lrfc.validate();
  }
};

// Learned association vectors indexed by UNORDERED category pair; both
// orderings resolve to the same storage row.
class PairTable {
public:
  PairTable(std::size_t num_categories, std::size_t dim)
      : g_(num_categories), dim_(dim),
        storage_(Tensor::zeros({num_categories * (num_categories + 1) / 2, dim})) {}

  static std::size_t pair_index(std::size_t a, std::size_t b, std::size_t g) {
    if (a >= g || b >= g)
      throw std::invalid_argument("pair_table: category id out of range");
    if (a > b) std::swap(a, b);
    return a * g - a * (a - 1) / 2 + (b - a);
  }

  std::size_t index(std::size_t a, std::size_t b) const { return pair_index(a, b, g_); }

  // Returns the stored vector; (a,b) and (b,a) read identical bytes.
  std::vector<double> lookup(std::size_t a, std::size_t b) const {
    const std::size_t row = index(a, b);
    return std::vector<double>(storage_.data().begin() + row * dim_,
                               storage_.data().begin() + (row + 1) * dim_);
  }

  std::size_t num_categories() const { return g_; }
  std::size_t num_pairs() const { return g_ * (g_ + 1) / 2; }
  std::size_t dim() const { return dim_; }
  Tensor& storage() { return storage_; }
  const Tensor& storage() const { return storage_; }

private:
  std::size_t g_;
  std::size_t dim_;
  Tensor storage_;  // (g(g+1)/2, dim)
};

// Directed edge list for a batch of same-size patterns; indices are global
// over the concatenated vertex rows.
struct EdgeIndex {
  std::size_t num_vertices = 0;
  std::size_t k = 0;
  std::vector<std::size_t> center;    // num_vertices * k
  std::vector<std::size_t> neighbor;  // num_vertices * k

  std::size_t num_edges() const { return center.size(); }
};

inline EdgeIndex edges_from_graphs(const std::vector<NeighborGraph>& graphs,
                                   std::size_t points_per_sample) {
  EdgeIndex e;
  e.k = graphs.empty() ? 0 : graphs[0].k;
  for (std::size_t b = 0; b < graphs.size(); ++b) {
    const NeighborGraph& g = graphs[b];
    const std::size_t offset = b * points_per_sample;
    for (std::size_t i = 0; i < g.n; ++i)
      for (std::size_t j = 0; j < g.k; ++j) {
        e.center.push_back(offset + i);
        e.neighbor.push_back(offset + g.neighbor(i, j));
      }
    e.num_vertices += g.n;
  }
  return e;
}

// ---------------------------------------------------------------------------
// Layer operations (tape-recorded)
// ---------------------------------------------------------------------------

// Layer 1 edge features: leaky_relu(theta . |PE(c_i)-PE(c_j)| + phi . c_i).
// With use_lrfc off the local term is the raw |c_i - c_j|.
inline Tensor edge_conv_first(const Tensor& coords, const EdgeIndex& edges,
                              const LrfcConfig& lrfc_cfg, const Tensor& theta,
                              const Tensor& phi, bool use_lrfc, double slope = 0.2) {
  detail::require(coords.rank() == 2 && coords.shape()[1] == 2,
                  "edge_conv_first: coords must be (N,2)");
  const std::size_t n = coords.shape()[0];
  const std::size_t local_dim = use_lrfc ? lrfc_cfg.encoding_dim() : 2;
  detail::require(theta.shape()[0] == local_dim,
                  "edge_conv_first: theta expects local dim " + std::to_string(local_dim) +
                      ", got " + shape_str(theta.shape()));
  const std::size_t ne = edges.num_edges();

  Tensor local = Tensor::zeros({ne, local_dim});
  if (use_lrfc) {
    std::vector<double> pe(n * lrfc_cfg.encoding_dim());
    for (std::size_t i = 0; i < n; ++i)
      lrfc::encode_into(coords.data()[i * 2], coords.data()[i * 2 + 1], lrfc_cfg,
                        pe.data() + i * lrfc_cfg.encoding_dim());
    for (std::size_t e = 0; e < ne; ++e) {
      const double* pi = pe.data() + edges.center[e] * local_dim;
      const double* pj = pe.data() + edges.neighbor[e] * local_dim;
      for (std::size_t t = 0; t < local_dim; ++t)
        local.data()[e * local_dim + t] = std::fabs(pi[t] - pj[t]);
    }
  } else {
    for (std::size_t e = 0; e < ne; ++e)
      for (std::size_t t = 0; t < 2; ++t)
        local.data()[e * 2 + t] = std::fabs(coords.data()[edges.center[e] * 2 + t] -
                                            coords.data()[edges.neighbor[e] * 2 + t]);
  }
  Tensor centers = index_select(coords, edges.center);
  return leaky_relu(add(matmul(local, theta), matmul(centers, phi)), slope);
}

// Later layers: leaky_relu(theta . (h_j - h_i) + phi . h_i) on the current
// feature-space graph.
inline Tensor edge_conv_generic(const Tensor& h, const EdgeIndex& edges, const Tensor& theta,
                                const Tensor& phi, double slope = 0.2) {
  detail::require(h.rank() == 2, "edge_conv_generic: features must be (N,F)");
  Tensor hi = index_select(h, edges.center);
  Tensor hj = index_select(h, edges.neighbor);
  Tensor local = subtract(hj, hi);
  return leaky_relu(add(matmul(local, theta), matmul(hi, phi)), slope);
}

// Point-pair prioritization (one head): e_hat = a^T (W e''), alpha = softmax
// over each neighborhood of leaky_relu(e_hat), output = sigma(mean of
// alpha-weighted W e''). Modes: pair indexes a by {f_i,f_j}, self by
// {f_i,f_i}, neighbor by {f_j,f_j}, self_neighbor sums both scores, none
// plain-averages W e''. With top_k_prime set, only the k' highest-alpha
// neighbors are pooled (alpha renormalized over the kept subset).
inline Tensor prioritize(const Tensor& edge_features, const std::vector<std::size_t>& categories,
                         const EdgeIndex& edges, const PairTable& table, const Tensor& w,
                         PrioritizationMode mode, std::size_t top_k_prime = 0,
                         double slope = 0.2, Tensor* alpha_out = nullptr) {
  const std::size_t ne = edges.num_edges();
  const std::size_t k = edges.k;
  const std::size_t nv = edges.num_vertices;
  detail::require(edge_features.rank() == 2 && edge_features.shape()[0] == ne,
                  "prioritize: edge feature shape mismatch");
  detail::require(categories.size() == nv, "prioritize: need one category per vertex");
  for (const std::size_t c : categories)
    detail::require(c < table.num_categories(),
                    "prioritize: unknown category id " + std::to_string(c));

  Tensor we = matmul(edge_features, w);
  const std::size_t d = we.shape()[1];
  const std::size_t k_pool = (top_k_prime > 0 && top_k_prime < k) ? top_k_prime : k;

  if (mode == PrioritizationMode::kNone) {
    if (alpha_out) *alpha_out = Tensor::full({nv, k}, 1.0 / static_cast<double>(k));
    return leaky_relu(mean(reshape(we, {nv, k, d}), 1), slope);
  }

  auto gather_scores = [&](bool use_self, bool use_neighbor) {
    std::vector<std::size_t> rows(ne);
    for (std::size_t e = 0; e < ne; ++e) {
      const std::size_t fi = categories[edges.center[e]];
      const std::size_t fj = categories[edges.neighbor[e]];
      std::size_t a = fi, b = fj;
      if (use_self) a = b = fi;
      if (use_neighbor) a = b = fj;
      rows[e] = table.index(a, b);
    }
    Tensor assoc = index_select(table.storage(), rows);
    return sum(mul(assoc, we), 1);  // (ne)
  };

  Tensor scores;  // e_hat per edge
  switch (mode) {
    case PrioritizationMode::kPair: scores = gather_scores(false, false); break;
    case PrioritizationMode::kSelf: scores = gather_scores(true, false); break;
    case PrioritizationMode::kNeighbor: scores = gather_scores(false, true); break;
    case PrioritizationMode::kSelfNeighbor:
      scores = add(gather_scores(true, false), gather_scores(false, true));
      break;
    case PrioritizationMode::kNone: break;  // handled above
  }

  Tensor activated = leaky_relu(scores, slope);
  if (top_k_prime > 0 && top_k_prime < k) {
    // Mask all but the k' highest scores per neighborhood before the softmax;
    // exp(-1e30) is exactly 0, so alpha renormalizes over the kept subset.
    Tensor mask = Tensor::zeros({ne});
    std::vector<std::size_t> order(k);
    for (std::size_t i = 0; i < nv; ++i) {
      for (std::size_t j = 0; j < k; ++j) order[j] = j;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return activated.data()[i * k + a] > activated.data()[i * k + b];
      });
      for (std::size_t j = top_k_prime; j < k; ++j) mask.data()[i * k + order[j]] = -1e30;
    }
    activated = add(activated, mask);
  }
  Tensor alpha = softmax(reshape(activated, {nv, k}), 1);
  if (alpha_out) *alpha_out = alpha.detached();

  Tensor weighted = scale_rows(we, reshape(alpha, {ne}));
  Tensor pooled = scale(sum(reshape(weighted, {nv, k, d}), 1),
                        1.0 / static_cast<double>(k_pool));
  return leaky_relu(pooled, slope);
}

struct HeadParams {
  Tensor w;          // (d', d')
  PairTable pairs;   // association vectors, (g(g+1)/2, d')
};

// K-head extension: AGG over per-head prioritization outputs.
inline Tensor multi_head(const Tensor& edge_features, const std::vector<std::size_t>& categories,
                         const EdgeIndex& edges, std::vector<HeadParams>& heads,
                         PrioritizationMode mode, HeadAggregation agg,
                         std::size_t top_k_prime = 0, double slope = 0.2) {
  detail::require(!heads.empty(), "multi_head: need at least one head");
  std::vector<Tensor> outs;
  outs.reserve(heads.size());
  for (HeadParams& h : heads)
    outs.push_back(prioritize(edge_features, categories, edges, h.pairs, h.w, mode,
                              top_k_prime, slope));
  if (outs.size() == 1) return outs[0];
  if (agg == HeadAggregation::kConcat) return concat(outs, 1);
  Tensor acc = outs[0];
  for (std::size_t i = 1; i < outs.size(); ++i) acc = add(acc, outs[i]);
  return scale(acc, 1.0 / static_cast<double>(outs.size()));
}

// ---------------------------------------------------------------------------
// Full model
// ---------------------------------------------------------------------------

struct LayerParams {
  Tensor theta, phi;
  std::vector<HeadParams> heads;
  BatchNorm bn;  // over the layer's vertex embeddings

  LayerParams(std::size_t local_in, std::size_t global_in, std::size_t width,
              std::size_t num_heads, std::size_t num_categories, std::size_t out_width)
      : theta(Tensor::zeros({local_in, width})),
        phi(Tensor::zeros({global_in, width})),
        bn(out_width) {
    for (std::size_t h = 0; h < num_heads; ++h)
      heads.push_back({Tensor::zeros({width, width}), PairTable(num_categories, width)});
  }
};

// Per-layer intermediates exposed for tests and interpretability.
struct ForwardTrace {
  std::vector<std::vector<NeighborGraph>> layer_graphs;  // [layer][sample]
  std::vector<Tensor> layer_outputs;                     // (B*n, width), detached
  std::vector<Tensor> layer_alphas;                      // (B*n, k), detached, head 0
  Tensor logits;
};

class Model {
public:
  // The tape lives behind a unique_ptr so parameter impls can hold a stable
  // Tape* across moves of the Model itself.
  Model(ModelConfig cfg, std::uint64_t init_seed)
      : cfg_(std::move(cfg)), tape_(std::make_unique<Tape>()) {
    cfg_.validate();
    if (cfg_.num_categories == 0 || cfg_.num_classes == 0)
      throw std::invalid_argument("model: config must bind num_categories/num_classes");
    Rng rng = Rng(init_seed).split("init");

    const std::size_t L = cfg_.layer_widths.size();
    std::size_t in_width = 0;  // vertex feature width entering the layer
    std::size_t sum_out = 0;
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t width = cfg_.layer_widths[l];
      const std::size_t local_in =
          l == 0 ? (cfg_.use_lrfc ? cfg_.lrfc.encoding_dim() : 2) : in_width;
      const std::size_t global_in = l == 0 ? 2 : in_width;
      const std::size_t out_width =
          cfg_.head_agg == HeadAggregation::kConcat ? width * cfg_.heads : width;
      layers_.emplace_back(local_in, global_in, width, cfg_.heads, cfg_.num_categories,
                           out_width);
      Rng lrng = rng.split(l);
      init_uniform(layers_[l].theta, local_in, lrng);
      init_uniform(layers_[l].phi, global_in, lrng);
      for (auto& head : layers_[l].heads) {
        init_uniform(head.w, width, lrng);
        init_uniform(head.pairs.storage(), width, lrng);
      }
      in_width = out_width;
      sum_out += out_width;
    }

    Rng hrng = rng.split("classifier");
    shared_w_ = Tensor::zeros({sum_out, cfg_.emb_dims});
    init_uniform(shared_w_, sum_out, hrng);
    shared_bn_ = std::make_unique<BatchNorm>(cfg_.emb_dims);

    std::size_t fan_in = 2 * cfg_.emb_dims;  // max-pool and mean-pool concatenated
    for (const std::size_t wdt : cfg_.head_widths) {
      Tensor w = Tensor::zeros({fan_in, wdt});
      init_uniform(w, fan_in, hrng);
      head_ws_.push_back(w);
      head_bns_.push_back(std::make_unique<BatchNorm>(wdt));
      fan_in = wdt;
    }
    out_w_ = Tensor::zeros({fan_in, cfg_.num_classes});
    init_uniform(out_w_, fan_in, hrng);
    out_b_ = Tensor::zeros({cfg_.num_classes});

    attach_params();
  }

  const ModelConfig& config() const { return cfg_; }
  Tape& tape() { return *tape_; }
  std::vector<LayerParams>& layers() { return layers_; }

  std::vector<Tensor> parameters() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(*t);
    return out;
  }

  // Parameters that actually receive gradients under the configured
  // prioritization mode (mode none never touches the pair tables).
  std::vector<Tensor> trainable_parameters() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) {
      if (cfg_.prioritization == PrioritizationMode::kNone &&
          name.find(".pairs") != std::string::npos)
        continue;
      out.push_back(*t);
    }
    return out;
  }

  std::vector<std::pair<std::string, Tensor*>> named_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      out.emplace_back(p + "theta", &layers_[l].theta);
      out.emplace_back(p + "phi", &layers_[l].phi);
      for (std::size_t h = 0; h < layers_[l].heads.size(); ++h) {
        const std::string hp = p + "head" + std::to_string(h) + ".";
        out.emplace_back(hp + "w", &layers_[l].heads[h].w);
        out.emplace_back(hp + "pairs", &layers_[l].heads[h].pairs.storage());
      }
      out.emplace_back(p + "bn.gamma", &layers_[l].bn.gamma);
      out.emplace_back(p + "bn.beta", &layers_[l].bn.beta);
    }
    out.emplace_back("shared.w", &shared_w_);
    out.emplace_back("shared.bn.gamma", &shared_bn_->gamma);
    out.emplace_back("shared.bn.beta", &shared_bn_->beta);
    for (std::size_t i = 0; i < head_ws_.size(); ++i) {
      const std::string p = "head.fc" + std::to_string(i + 1) + ".";
      out.emplace_back(p + "w", &head_ws_[i]);
      out.emplace_back(p + "bn.gamma", &head_bns_[i]->gamma);
      out.emplace_back(p + "bn.beta", &head_bns_[i]->beta);
    }
    out.emplace_back("head.out.w", &out_w_);
    out.emplace_back("head.out.b", &out_b_);
    return out;
  }

  // Batch-norm running estimates (saved with checkpoints, not optimized).
  std::vector<std::pair<std::string, std::vector<double>*>> named_buffers() {
    std::vector<std::pair<std::string, std::vector<double>*>> out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const std::string p = "layer" + std::to_string(l) + ".bn.";
      out.emplace_back(p + "running_mean", &layers_[l].bn.running_mean);
      out.emplace_back(p + "running_var", &layers_[l].bn.running_var);
    }
    out.emplace_back("shared.bn.running_mean", &shared_bn_->running_mean);
    out.emplace_back("shared.bn.running_var", &shared_bn_->running_var);
    for (std::size_t i = 0; i < head_bns_.size(); ++i) {
      const std::string p = "head.fc" + std::to_string(i + 1) + ".bn.";
      out.emplace_back(p + "running_mean", &head_bns_[i]->running_mean);
      out.emplace_back(p + "running_var", &head_bns_[i]->running_var);
    }
    return out;
  }

  // Forward over a batch of equally sized patterns. Returns (B, classes)
  // logits; per-pattern graphs never cross sample boundaries.
  Tensor forward(const std::vector<const PointPattern*>& batch, bool training, Rng& rng,
                 ForwardTrace* trace = nullptr) {
    detail::require(!batch.empty(), "forward: empty batch");
    const std::size_t n = batch[0]->points.size();
    detail::require(n >= cfg_.k + 1, "forward: pattern needs at least k+1=" +
                                         std::to_string(cfg_.k + 1) + " points, got " +
                                         std::to_string(n));
    for (const PointPattern* p : batch)
      detail::require(p->points.size() == n, "forward: batch patterns must be equally sized");
    const std::size_t B = batch.size();
    const std::size_t nv = B * n;

    Tensor coords = Tensor::zeros({nv, 2});
    std::vector<std::size_t> cats(nv);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < n; ++i) {
        const Point& p = batch[b]->points[i];
        detail::require(p.category < cfg_.num_categories,
                        "forward: category id out of range");
        coords.data()[(b * n + i) * 2] = p.x;
        coords.data()[(b * n + i) * 2 + 1] = p.y;
        cats[b * n + i] = p.category;
      }

    std::vector<NeighborGraph> graphs;
    graphs.reserve(B);
    for (std::size_t b = 0; b < B; ++b) graphs.push_back(knn_coords(batch[b]->points, cfg_.k));
    EdgeIndex edges = edges_from_graphs(graphs, n);
    if (trace) trace->layer_graphs.push_back(graphs);

    std::vector<Tensor> layer_outputs;
    Tensor h;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (l > 0) {
        // Dynamic graph: rebuild per sample in the embedding space of the
        // previous layer (indices are discrete; no gradient flows here).
        const std::size_t width = h.shape()[1];
        graphs.clear();
        for (std::size_t b = 0; b < B; ++b) {
          std::vector<double> feats(h.data().begin() + b * n * width,
                                    h.data().begin() + (b + 1) * n * width);
          graphs.push_back(knn_features(feats, n, width, cfg_.k));
        }
        edges = edges_from_graphs(graphs, n);
        if (trace) trace->layer_graphs.push_back(graphs);
      }
      Tensor e = l == 0 ? edge_conv_first(coords, edges, cfg_.lrfc, layers_[0].theta,
                                          layers_[0].phi, cfg_.use_lrfc, cfg_.leaky_slope)
                        : edge_conv_generic(h, edges, layers_[l].theta, layers_[l].phi,
                                            cfg_.leaky_slope);
      Tensor v;
      if (layers_[l].heads.size() == 1) {
        Tensor alpha;
        v = prioritize(e, cats, edges, layers_[l].heads[0].pairs, layers_[l].heads[0].w,
                       cfg_.prioritization, cfg_.top_k_prime, cfg_.leaky_slope,
                       trace ? &alpha : nullptr);
        if (trace) trace->layer_alphas.push_back(alpha);
      } else {
        v = multi_head(e, cats, edges, layers_[l].heads, cfg_.prioritization, cfg_.head_agg,
                       cfg_.top_k_prime, cfg_.leaky_slope);
        if (trace) trace->layer_alphas.emplace_back();
      }
      h = batch_norm(v, layers_[l].bn, training);
      layer_outputs.push_back(h);
      if (trace) trace->layer_outputs.push_back(h.detached());
    }

    Tensor all = layer_outputs.size() == 1 ? layer_outputs[0] : concat(layer_outputs, 1);
    Tensor shared = leaky_relu(batch_norm(matmul(all, shared_w_), *shared_bn_, training),
                               cfg_.leaky_slope);
    Tensor per_sample = reshape(shared, {B, n, cfg_.emb_dims});
    Tensor pooled = concat({max(per_sample, 1), mean(per_sample, 1)}, 1);  // (B, 2*emb)

    Tensor x = pooled;
    for (std::size_t i = 0; i < head_ws_.size(); ++i) {
      x = leaky_relu(batch_norm(matmul(x, head_ws_[i]), *head_bns_[i], training),
                     cfg_.leaky_slope);
      x = dropout(x, cfg_.dropout, training, rng);
    }
    Tensor logits = linear(x, out_w_, out_b_);
    if (trace) trace->logits = logits.detached();
    return logits;
  }

  Tensor forward(const PointPattern& pattern, bool training, Rng& rng,
                 ForwardTrace* trace = nullptr) {
    return forward(std::vector<const PointPattern*>{&pattern}, training, rng, trace);
  }

  // Value snapshot of every parameter and running buffer.
  std::vector<std::vector<double>> snapshot() {
    std::vector<std::vector<double>> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t->data());
    for (auto& [name, b] : named_buffers()) out.push_back(*b);
    return out;
  }

  void restore(const std::vector<std::vector<double>>& snap) {
    std::size_t i = 0;
    for (auto& [name, t] : named_parameters()) t->data() = snap.at(i++);
    for (auto& [name, b] : named_buffers()) *b = snap.at(i++);
  }

private:
  static void init_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  }

  void attach_params() {
    for (auto& [name, t] : named_parameters()) t->requires_grad_(*tape_);
  }

  ModelConfig cfg_;
  std::unique_ptr<Tape> tape_;
  std::vector<LayerParams> layers_;
  Tensor shared_w_;
  std::unique_ptr<BatchNorm> shared_bn_;
  std::vector<Tensor> head_ws_;
  std::vector<std::unique_ptr<BatchNorm>> head_bns_;
  Tensor out_w_, out_b_;
};

// ---------------------------------------------------------------------------
// Training / evaluation
// ---------------------------------------------------------------------------

struct EpochStats {
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

inline PointPattern sized_for_model(const PointPattern& p, std::size_t num_points,
                                    std::uint64_t seed) {
  if (p.points.size() == num_points) return p;
  return sample_points(p, num_points, seed);
}

inline Metrics evaluate(Model& model, const Dataset& test, std::uint64_t eval_seed = 1) {
  const ModelConfig& cfg = model.config();
  detail::require(!test.patterns.empty(), "evaluate: empty dataset");
  std::vector<std::vector<std::size_t>> confusion(
      cfg.num_classes, std::vector<std::size_t>(cfg.num_classes, 0));
  NoGradGuard guard(model.tape());
  Rng dummy(0);
  double seconds = 0.0;
  Rng sampler = Rng(eval_seed).split("eval");
  for (const PointPattern& p : test.patterns) {
    const PointPattern sized =
        sized_for_model(p, cfg.num_points, sampler.split(p.sample_id).next_u64());
    const auto t0 = std::chrono::steady_clock::now();
    Tensor logits = model.forward(sized, false, dummy);
    const auto t1 = std::chrono::steady_clock::now();
    seconds += std::chrono::duration<double>(t1 - t0).count();
    const double* row = logits.data().data();
    const std::size_t pred = static_cast<std::size_t>(
        std::max_element(row, row + cfg.num_classes) - row);
    confusion[p.label][pred]++;
  }
  Metrics m = metrics_from_confusion(std::move(confusion));
  m.per_sample_seconds = seconds / static_cast<double>(test.patterns.size());
  return m;
}

// Minibatch Adam training; retains the best-validation-accuracy parameters.
// Trailing single-sample batches are merged into the previous batch so the
// classifier head always normalizes over at least two rows.
inline TrainHistory train(Model& model, const Dataset& train_set, const Dataset& val_set) {
  const ModelConfig& cfg = model.config();
  detail::require(!train_set.patterns.empty(), "train: empty training set");

  Dataset working = cfg.augment_rotations > 0 ? augment(train_set, cfg.augment_rotations)
                                              : train_set;

  AdamConfig acfg;
  acfg.lr = cfg.lr;
  Adam opt(model.trainable_parameters(), acfg);
  Rng root(cfg.seed);
  Rng dropout_rng = root.split("dropout");

  TrainHistory history;
  double best_val = -1.0;
  std::vector<std::vector<double>> best_snapshot;

  std::vector<std::size_t> order(working.patterns.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng = root.split("epoch").split(epoch);
    erng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      std::size_t take = std::min(cfg.batch_size, order.size() - pos);
      if (order.size() - pos - take == 1) ++take;  // absorb trailing singleton
      std::vector<PointPattern> sampled;
      std::vector<const PointPattern*> batch;
      std::vector<std::size_t> labels;
      sampled.reserve(take);
      for (std::size_t t = 0; t < take; ++t) {
        const PointPattern& p = working.patterns[order[pos + t]];
        sampled.push_back(sized_for_model(p, cfg.num_points, erng.next_u64()));
        labels.push_back(p.label);
      }
      for (const auto& p : sampled) batch.push_back(&p);

      model.tape().clear();
      opt.zero_grad();
      Tensor logits = model.forward(batch, true, dropout_rng);
      Tensor loss = cross_entropy(logits, labels);
      model.tape().backward(loss);
      opt.step();

      loss_sum += loss.item() * static_cast<double>(take);
      seen += take;
      pos += take;
    }
    model.tape().clear();

    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(seen);
    if (!val_set.patterns.empty()) {
      stats.val_accuracy = evaluate(model, val_set, cfg.seed ^ 0x5A5A5A5AULL).accuracy;
      if (stats.val_accuracy > best_val) {
        best_val = stats.val_accuracy;
        best_snapshot = model.snapshot();
      }
    }
    history.epochs.push_back(stats);
  }
  if (!best_snapshot.empty()) model.restore(best_snapshot);
  return history;
}

// ---------------------------------------------------------------------------
// Config <-> JSON, checkpoint format
// ---------------------------------------------------------------------------

inline nlohmann::json config_to_json(const ModelConfig& cfg) {
  nlohmann::json model = {
      {"k", cfg.k},
      {"layer_widths", cfg.layer_widths},
      {"emb_dims", cfg.emb_dims},
      {"head_widths", cfg.head_widths},
      {"heads", cfg.heads},
      {"head_agg", cfg.head_agg == HeadAggregation::kConcat ? "concat" : "average"},
      {"dropout", cfg.dropout},
      {"top_k_prime", cfg.top_k_prime},
      {"use_lrfc", cfg.use_lrfc},
      {"prioritization", to_string(cfg.prioritization)},
      {"lrfc", {{"scale_count", cfg.lrfc.scale_count},
                {"lambda_min", cfg.lrfc.lambda_min},
                {"lambda_max", cfg.lrfc.lambda_max}}},
  };
  nlohmann::json train = {
      {"epochs", cfg.epochs},       {"batch_size", cfg.batch_size},
      {"lr", cfg.lr},               {"seed", cfg.seed},
      {"num_points", cfg.num_points}, {"augment_rotations", cfg.augment_rotations},
  };
  return {{"model", model},
          {"train", train},
          {"categories", cfg.category_names},
          {"classes", cfg.class_names}};
}

inline void apply_model_json(ModelConfig& cfg, const nlohmann::json& j) {
  static const std::set<std::string> known{
      "k",       "layer_widths", "emb_dims",    "head_widths", "heads", "head_agg",
      "dropout", "top_k_prime",  "use_lrfc",    "prioritization", "lrfc"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key))
      throw std::invalid_argument("config: unknown model key '" + key + "'");
  if (j.contains("k")) cfg.k = j["k"].get<std::size_t>();
  if (j.contains("layer_widths")) cfg.layer_widths = j["layer_widths"].get<std::vector<std::size_t>>();
  if (j.contains("emb_dims")) cfg.emb_dims = j["emb_dims"].get<std::size_t>();
  if (j.contains("head_widths")) cfg.head_widths = j["head_widths"].get<std::vector<std::size_t>>();
  if (j.contains("heads")) cfg.heads = j["heads"].get<std::size_t>();
  if (j.contains("head_agg"))
    cfg.head_agg = j["head_agg"].get<std::string>() == "concat" ? HeadAggregation::kConcat
                                                                : HeadAggregation::kAverage;
  if (j.contains("dropout")) cfg.dropout = j["dropout"].get<double>();
  if (j.contains("top_k_prime")) cfg.top_k_prime = j["top_k_prime"].get<std::size_t>();
  if (j.contains("use_lrfc")) cfg.use_lrfc = j["use_lrfc"].get<bool>();
  if (j.contains("prioritization"))
    cfg.prioritization = prioritization_from_string(j["prioritization"].get<std::string>());
  if (j.contains("lrfc")) {
    const auto& l = j["lrfc"];
    static const std::set<std::string> lknown{"scale_count", "lambda_min", "lambda_max"};
    for (const auto& [key, _] : l.items())
      if (!lknown.count(key))
        throw std::invalid_argument("config: unknown lrfc key '" + key + "'");
    if (l.contains("scale_count")) cfg.lrfc.scale_count = l["scale_count"].get<std::size_t>();
    if (l.contains("lambda_min")) cfg.lrfc.lambda_min = l["lambda_min"].get<double>();
    if (l.contains("lambda_max")) cfg.lrfc.lambda_max = l["lambda_max"].get<double>();
  }
}

inline void apply_train_json(ModelConfig& cfg, const nlohmann::json& j) {
  static const std::set<std::string> known{"epochs",     "batch_size",       "lr", "seed",
                                           "num_points", "augment_rotations"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key))
      throw std::invalid_argument("config: unknown train key '" + key + "'");
  if (j.contains("epochs")) cfg.epochs = j["epochs"].get<std::size_t>();
  if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<std::size_t>();
  if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("num_points")) cfg.num_points = j["num_points"].get<std::size_t>();
  if (j.contains("augment_rotations"))
    cfg.augment_rotations = j["augment_rotations"].get<std::size_t>();
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  if (j.contains("model")) apply_model_json(cfg, j["model"]);
  if (j.contains("train")) apply_train_json(cfg, j["train"]);
  if (j.contains("categories")) {
    cfg.category_names = j["categories"].get<std::vector<std::string>>();
    cfg.num_categories = cfg.category_names.size();
  }
  if (j.contains("classes")) {
    cfg.class_names = j["classes"].get<std::vector<std::string>>();
    cfg.num_classes = cfg.class_names.size();
  }
  return cfg;
}

// Checkpoint layout: 8-byte magic, u64 little-endian header length, JSON
// header {format, config, manifest: [{name, shape, offset}]}, then raw
// little-endian float64 payloads. Offsets are relative to the payload start.
inline constexpr char kCheckpointMagic[8] = {'S', 'A', 'M', 'C', 'N', 'E', 'T', '1'};

inline void save_checkpoint(Model& model, const std::string& path) {
  nlohmann::json manifest = nlohmann::json::array();
  std::vector<const std::vector<double>*> payloads;
  std::size_t offset = 0;
  auto add = [&](const std::string& name, const Shape& shape, const std::vector<double>* v) {
    manifest.push_back({{"name", name}, {"shape", shape}, {"offset", offset}});
    payloads.push_back(v);
    offset += v->size() * sizeof(double);
  };
  for (auto& [name, t] : model.named_parameters()) add(name, t->shape(), &t->data());
  for (auto& [name, b] : model.named_buffers()) add(name, {b->size()}, b);

  nlohmann::json header = {{"format", 1},
                           {"config", config_to_json(model.config())},
                           {"manifest", manifest}};
  const std::string header_str = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + tmp);
    out.write(kCheckpointMagic, 8);
    const std::uint64_t len = header_str.size();
    char lenbuf[8];
    for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((len >> (8 * i)) & 0xFF);
    out.write(lenbuf, 8);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto* v : payloads)
      out.write(reinterpret_cast<const char*>(v->data()),
                static_cast<std::streamsize>(v->size() * sizeof(double)));
    if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("checkpoint: rename failed for " + path);
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || !std::equal(magic, magic + 8, kCheckpointMagic))
    throw std::runtime_error("checkpoint: bad magic in " + path);
  char lenbuf[8];
  in.read(lenbuf, 8);
  if (!in) throw std::runtime_error("checkpoint: truncated header length");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i)
    len |= static_cast<std::uint64_t>(static_cast<unsigned char>(lenbuf[i])) << (8 * i);
  std::string header_str(len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("checkpoint: truncated header");
  nlohmann::json header = nlohmann::json::parse(header_str);
  if (header.at("format").get<int>() != 1)
    throw std::runtime_error("checkpoint: unsupported format version");

  ModelConfig cfg = config_from_json(header.at("config"));
  Model model(cfg, /*init_seed=*/0);

  std::map<std::string, std::pair<Shape, std::size_t>> manifest;
  for (const auto& entry : header.at("manifest"))
    manifest[entry.at("name").get<std::string>()] = {
        entry.at("shape").get<Shape>(), entry.at("offset").get<std::size_t>()};

  const std::streampos payload_start = in.tellg();
  auto read_into = [&](const std::string& name, const Shape& want, std::vector<double>& dst) {
    auto it = manifest.find(name);
    if (it == manifest.end())
      throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
    if (it->second.first != want)
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file has " +
                               shape_str(it->second.first) + ", model wants " +
                               shape_str(want));
    in.seekg(payload_start + static_cast<std::streamoff>(it->second.second));
    in.read(reinterpret_cast<char*>(dst.data()),
            static_cast<std::streamsize>(dst.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated payload for '" + name + "'");
  };
  for (auto& [name, t] : model.named_parameters()) read_into(name, t->shape(), t->data());
  for (auto& [name, b] : model.named_buffers()) read_into(name, {b->size()}, *b);
  return model;
}

}  // namespace samcnet
