#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "samcnet/model.hpp"

// Post-hoc interpretability: per-layer category-pair importances from the
// learned association vectors, and N-way spatial relationship ranking via
// permutation feature importance over signature-grouped embeddings.

namespace samcnet {

enum class VectorNorm { kL2, kL1 };

struct PairImportanceMatrix {
  std::size_t layer = 0;
  std::vector<std::vector<double>> values;  // g x g, symmetric, max entry 1
};

// Norm of each pair's association vector (averaged over heads), divided by
// the maximum so entries land in [0,1] with the max exactly 1.
inline PairImportanceMatrix pair_importance(Model& model, std::size_t layer,
                                            VectorNorm norm = VectorNorm::kL2) {
  if (layer >= model.layers().size())
    throw std::invalid_argument("pair_importance: layer " + std::to_string(layer) +
                                " out of range");
  const std::size_t g = model.config().num_categories;
  PairImportanceMatrix out;
  out.layer = layer;
  out.values.assign(g, std::vector<double>(g, 0.0));
  double max_v = 0.0;
  for (std::size_t a = 0; a < g; ++a)
    for (std::size_t b = a; b < g; ++b) {
      double acc = 0.0;
      for (const HeadParams& head : model.layers()[layer].heads) {
        const std::vector<double> v = head.pairs.lookup(a, b);
        double n = 0.0;
        for (const double x : v) n += norm == VectorNorm::kL2 ? x * x : std::fabs(x);
        acc += norm == VectorNorm::kL2 ? std::sqrt(n) : n;
      }
      acc /= static_cast<double>(model.layers()[layer].heads.size());
      out.values[a][b] = out.values[b][a] = acc;
      max_v = std::max(max_v, acc);
    }
  if (max_v == 0.0)
    throw std::invalid_argument("pair_importance: all association vectors are zero");
  for (auto& row : out.values)
    for (double& v : row) v /= max_v;
  return out;
}

// (center category, set of distinct neighbor categories) — the grouping key
// for higher-order relationship features.
struct NWaySignature {
  std::size_t center = 0;
  std::vector<std::size_t> neighbors;  // sorted, distinct, non-empty

  bool operator<(const NWaySignature& o) const {
    if (center != o.center) return center < o.center;
    return neighbors < o.neighbors;
  }
  bool operator==(const NWaySignature& o) const {
    return center == o.center && neighbors == o.neighbors;
  }
};

enum class SignatureGraph { kLastLayer, kCoordinates };

// Per-sample signature-grouped embeddings: run the model to the last
// prioritization layer, group centers by signature, and take the mean
// embedding per group. Absent signatures contribute zero blocks.
struct NWayFeatures {
  std::vector<NWaySignature> signatures;  // canonical (sorted) universe
  std::size_t dim = 0;                    // embedding width per block
  std::vector<std::vector<double>> rows;  // one row per sample, |signatures|*dim
  std::vector<std::size_t> labels;
};

inline NWayFeatures nway_features(Model& model, const Dataset& ds,
                                  SignatureGraph grouping = SignatureGraph::kLastLayer,
                                  std::uint64_t eval_seed = 1) {
  const ModelConfig& cfg = model.config();
  if (ds.patterns.empty()) throw std::invalid_argument("nway_features: empty dataset");

  NoGradGuard guard(model.tape());
  Rng dummy(0);
  Rng sampler = Rng(eval_seed).split("eval");

  struct SampleMap {
    std::map<NWaySignature, std::vector<double>> blocks;
  };
  std::vector<SampleMap> maps;
  std::set<NWaySignature> universe;
  std::size_t dim = 0;

  for (const PointPattern& raw : ds.patterns) {
    const PointPattern p =
        sized_for_model(raw, cfg.num_points, sampler.split(raw.sample_id).next_u64());
    ForwardTrace trace;
    model.forward(p, false, dummy, &trace);
    const std::size_t last = trace.layer_outputs.size() - 1;
    const Tensor& emb = trace.layer_outputs[last];
    dim = emb.shape()[1];
    const NeighborGraph& graph = grouping == SignatureGraph::kLastLayer
                                     ? trace.layer_graphs[last][0]
                                     : trace.layer_graphs[0][0];
    SampleMap sm;
    std::map<NWaySignature, std::size_t> counts;
    for (std::size_t i = 0; i < p.points.size(); ++i) {
      NWaySignature sig;
      sig.center = p.points[i].category;
      std::set<std::size_t> nbr;
      for (std::size_t j = 0; j < graph.k; ++j)
        nbr.insert(p.points[graph.neighbor(i, j)].category);
      sig.neighbors.assign(nbr.begin(), nbr.end());
      auto& block = sm.blocks[sig];
      if (block.empty()) block.assign(dim, 0.0);
      for (std::size_t t = 0; t < dim; ++t) block[t] += emb.data()[i * dim + t];
      counts[sig]++;
      universe.insert(sig);
    }
    for (auto& [sig, block] : sm.blocks)
      for (double& v : block) v /= static_cast<double>(counts.at(sig));
    maps.push_back(std::move(sm));
  }

  NWayFeatures out;
  out.signatures.assign(universe.begin(), universe.end());
  out.dim = dim;
  for (std::size_t s = 0; s < ds.patterns.size(); ++s) {
    std::vector<double> row(out.signatures.size() * dim, 0.0);
    for (std::size_t i = 0; i < out.signatures.size(); ++i) {
      auto it = maps[s].blocks.find(out.signatures[i]);
      if (it != maps[s].blocks.end())
        std::copy(it->second.begin(), it->second.end(), row.begin() + i * dim);
    }
    out.rows.push_back(std::move(row));
    out.labels.push_back(ds.patterns[s].label);
  }
  return out;
}

// Single linear layer + softmax on the tensor core; the probe classifier for
// permutation importance.
class LogisticProbe {
public:
  void fit(const std::vector<std::vector<double>>& rows, const std::vector<std::size_t>& labels,
           std::size_t num_classes, std::uint64_t seed, std::size_t epochs = 300,
           double lr = 1e-2) {
    const std::size_t n = rows.size(), f = rows[0].size();
    num_classes_ = num_classes;
    Tensor x = Tensor::zeros({n, f});
    for (std::size_t r = 0; r < n; ++r)
      std::copy(rows[r].begin(), rows[r].end(), x.data().begin() + r * f);
    Rng rng = Rng(seed).split("probe");
    w_ = Tensor::zeros({f, num_classes});
    const double bound = 1.0 / std::sqrt(static_cast<double>(f));
    for (auto& v : w_.data()) v = rng.uniform(-bound, bound);
    b_ = Tensor::zeros({num_classes});
    w_.requires_grad_(tape_);
    b_.requires_grad_(tape_);
    AdamConfig acfg;
    acfg.lr = lr;
    Adam opt({w_, b_}, acfg);
    for (std::size_t e = 0; e < epochs; ++e) {
      tape_.clear();
      opt.zero_grad();
      Tensor loss = cross_entropy(linear(x, w_, b_), labels);
      tape_.backward(loss);
      opt.step();
    }
    tape_.clear();
  }

  std::vector<std::size_t> predict(const std::vector<std::vector<double>>& rows) {
    NoGradGuard guard(tape_);
    std::vector<std::size_t> out;
    const std::size_t f = rows[0].size();
    Tensor x = Tensor::zeros({rows.size(), f});
    for (std::size_t r = 0; r < rows.size(); ++r)
      std::copy(rows[r].begin(), rows[r].end(), x.data().begin() + r * f);
    Tensor logits = linear(x, w_, b_);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const double* row = logits.data().data() + r * num_classes_;
      out.push_back(static_cast<std::size_t>(
          std::max_element(row, row + num_classes_) - row));
    }
    return out;
  }

private:
  Tape tape_;
  Tensor w_, b_;
  std::size_t num_classes_ = 0;
};

struct RankedRelationship {
  NWaySignature signature;
  double accuracy_drop = 0.0;
};

using RelationshipRanking = std::vector<RankedRelationship>;

namespace detail {

// Holdout accuracy with one signature block rearranged by `perm` across rows.
inline double accuracy_with_block_permuted(LogisticProbe& probe,
                                           const std::vector<std::vector<double>>& rows,
                                           const std::vector<std::size_t>& labels,
                                           std::size_t block, std::size_t dim,
                                           const std::vector<std::size_t>& perm) {
  std::vector<std::vector<double>> shuffled = rows;
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy(rows[perm[r]].begin() + block * dim, rows[perm[r]].begin() + (block + 1) * dim,
              shuffled[r].begin() + block * dim);
  return accuracy_of(probe.predict(shuffled), labels);
}

}  // namespace detail

// Fit the probe on a stratified 80/20 split, then score each signature by the
// mean held-out accuracy drop over 10 block shuffles. Descending order; ties
// resolve by signature order so the ranking is deterministic.
inline RelationshipRanking rank_by_permutation(const NWayFeatures& features,
                                               std::uint64_t seed,
                                               std::size_t repetitions = 10) {
  const std::size_t n = features.rows.size();
  if (n < 10) throw std::invalid_argument("rank_by_permutation: need at least 10 samples");
  std::set<std::size_t> classes(features.labels.begin(), features.labels.end());
  if (classes.size() < 2)
    throw std::invalid_argument("rank_by_permutation: need at least 2 classes");
  const std::size_t num_classes = *classes.rbegin() + 1;

  // stratified 80/20 holdout
  Rng rng = Rng(seed).split("rank");
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[features.labels[i]].push_back(i);
  std::vector<std::size_t> train_idx, hold_idx;
  for (auto& [cls, idx] : by_class) {
    Rng crng = rng.split(cls);
    crng.shuffle(idx);
    const std::size_t n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                            std::llround(0.2 * idx.size())));
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < n_hold ? hold_idx : train_idx).push_back(idx[i]);
  }

  auto gather = [&](const std::vector<std::size_t>& idx) {
    std::pair<std::vector<std::vector<double>>, std::vector<std::size_t>> out;
    for (const std::size_t i : idx) {
      out.first.push_back(features.rows[i]);
      out.second.push_back(features.labels[i]);
    }
    return out;
  };
  auto [train_rows, train_labels] = gather(train_idx);
  auto [hold_rows, hold_labels] = gather(hold_idx);

  LogisticProbe probe;
  probe.fit(train_rows, train_labels, num_classes, rng.split("probe_init").next_u64());
  const double baseline = accuracy_of(probe.predict(hold_rows), hold_labels);

  RelationshipRanking ranking;
  for (std::size_t s = 0; s < features.signatures.size(); ++s) {
    double mean_shuffled = 0.0;
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
      Rng prng = rng.split("shuffle").split(s).split(rep);
      std::vector<std::size_t> perm(hold_rows.size());
      for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
      prng.shuffle(perm);
      mean_shuffled += detail::accuracy_with_block_permuted(probe, hold_rows, hold_labels, s,
                                                            features.dim, perm);
    }
    mean_shuffled /= static_cast<double>(repetitions);
    ranking.push_back({features.signatures[s], baseline - mean_shuffled});
  }
  std::stable_sort(ranking.begin(), ranking.end(),
                   [](const RankedRelationship& a, const RankedRelationship& b) {
                     return a.accuracy_drop > b.accuracy_drop;
                   });
  return ranking;
}

// ---------------------------------------------------------------------------
// CSV artifacts
// ---------------------------------------------------------------------------

inline void write_pair_importance_csv(Model& model, const std::string& path,
                                      VectorNorm norm = VectorNorm::kL2) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  const auto& names = model.config().category_names;
  out << "layer,cat_a,cat_b,importance\n";
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    PairImportanceMatrix m = pair_importance(model, l, norm);
    for (std::size_t a = 0; a < names.size(); ++a)
      for (std::size_t b = a; b < names.size(); ++b)
        out << l << ',' << names[a] << ',' << names[b] << ','
            << detail::format_double(m.values[a][b]) << '\n';
  }
}

inline void write_relationships_csv(const RelationshipRanking& ranking,
                                    const std::vector<std::string>& category_names,
                                    const std::string& path, std::size_t top_n = 20) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "rank,center,neighbors,accuracy_drop\n";
  const std::size_t n = std::min(top_n, ranking.size());
  for (std::size_t r = 0; r < n; ++r) {
    out << (r + 1) << ',' << category_names.at(ranking[r].signature.center) << ',';
    for (std::size_t i = 0; i < ranking[r].signature.neighbors.size(); ++i) {
      if (i) out << '|';
      out << category_names.at(ranking[r].signature.neighbors[i]);
    }
    out << ',' << detail::format_double(ranking[r].accuracy_drop) << '\n';
  }
}

}  // namespace samcnet
