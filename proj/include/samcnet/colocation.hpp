#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "samcnet/pointset.hpp"
#include "samcnet/rng.hpp"
#include "samcnet/tensor.hpp"

// Classical spatial co-location statistics (cross-K, participation
// ratio/index) and the hand-constructed-feature baseline classifiers that
// consume them.

namespace samcnet {

struct ThresholdSet {
  std::vector<double> values;  // strictly increasing, positive

  void validate() const {
    if (values.empty()) throw std::invalid_argument("thresholds: empty");
    double prev = 0.0;
    for (const double h : values) {
      if (!(h > prev))
        throw std::invalid_argument("thresholds: must be strictly increasing and positive");
      prev = h;
    }
  }
};

namespace detail {

// Uniform grid with cell size h over the pattern's bounding box; 3x3 cell
// scans cover every pair within distance h.
class PairGrid {
public:
  PairGrid(const std::vector<Point>& points, double h) : points_(points), h_(h) {
    min_x_ = min_y_ = std::numeric_limits<double>::infinity();
    for (const Point& p : points) {
      min_x_ = std::min(min_x_, p.x);
      min_y_ = std::min(min_y_, p.y);
    }
    double max_x = -std::numeric_limits<double>::infinity();
    double max_y = -std::numeric_limits<double>::infinity();
    for (const Point& p : points) {
      max_x = std::max(max_x, p.x);
      max_y = std::max(max_y, p.y);
    }
    nx_ = static_cast<std::size_t>((max_x - min_x_) / h) + 1;
    ny_ = static_cast<std::size_t>((max_y - min_y_) / h) + 1;
    cells_.resize(nx_ * ny_);
    for (std::size_t i = 0; i < points.size(); ++i)
      cells_[cell_index(points[i])].push_back(i);
  }

  template <class Fn>
  void for_each_within(std::size_t i, Fn&& fn) const {
    const Point& p = points_[i];
    const std::size_t cx = col(p.x), cy = row(p.y);
    const std::size_t x_lo = cx > 0 ? cx - 1 : 0, x_hi = std::min(cx + 1, nx_ - 1);
    const std::size_t y_lo = cy > 0 ? cy - 1 : 0, y_hi = std::min(cy + 1, ny_ - 1);
    for (std::size_t by = y_lo; by <= y_hi; ++by)
      for (std::size_t bx = x_lo; bx <= x_hi; ++bx)
        for (const std::size_t j : cells_[by * nx_ + bx]) {
          if (j == i) continue;
          const double dx = p.x - points_[j].x, dy = p.y - points_[j].y;
          if (dx * dx + dy * dy <= h_ * h_) fn(j);
        }
  }

private:
  std::size_t col(double x) const {
    return std::min(static_cast<std::size_t>((x - min_x_) / h_), nx_ - 1);
  }
  std::size_t row(double y) const {
    return std::min(static_cast<std::size_t>((y - min_y_) / h_), ny_ - 1);
  }
  std::size_t cell_index(const Point& p) const { return row(p.y) * nx_ + col(p.x); }

  const std::vector<Point>& points_;
  double h_, min_x_, min_y_;
  std::size_t nx_, ny_;
  std::vector<std::vector<std::size_t>> cells_;
};

inline bool within(const Point& a, const Point& b, double h) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy <= h * h;
}

// Count of (i-instance, j-instance) pairs with d <= h. Self-pairs are
// excluded when i == j. Brute path kept as the oracle for the grid path.
inline std::size_t count_close_pairs(const PointPattern& pattern, std::size_t cat_i,
                                     std::size_t cat_j, double h, bool use_grid) {
  std::size_t count = 0;
  if (use_grid) {
    PairGrid grid(pattern.points, h);
    for (std::size_t a = 0; a < pattern.points.size(); ++a) {
      if (pattern.points[a].category != cat_i) continue;
      grid.for_each_within(a, [&](std::size_t b) {
        if (pattern.points[b].category == cat_j) ++count;
      });
    }
    return count;
  }
  for (std::size_t a = 0; a < pattern.points.size(); ++a) {
    if (pattern.points[a].category != cat_i) continue;
    for (std::size_t b = 0; b < pattern.points.size(); ++b) {
      if (b == a || pattern.points[b].category != cat_j) continue;
      if (within(pattern.points[a], pattern.points[b], h)) ++count;
    }
  }
  return count;
}

struct BoundingBox {
  double min_x, min_y, max_x, max_y;
  double area() const { return (max_x - min_x) * (max_y - min_y); }
};

inline BoundingBox bounding_box(const PointPattern& pattern) {
  BoundingBox bb{std::numeric_limits<double>::infinity(),
                 std::numeric_limits<double>::infinity(),
                 -std::numeric_limits<double>::infinity(),
                 -std::numeric_limits<double>::infinity()};
  for (const Point& p : pattern.points) {
    bb.min_x = std::min(bb.min_x, p.x);
    bb.min_y = std::min(bb.min_y, p.y);
    bb.max_x = std::max(bb.max_x, p.x);
    bb.max_y = std::max(bb.max_y, p.y);
  }
  return bb;
}

}  // namespace detail

inline std::size_t category_count(const PointPattern& pattern, std::size_t cat) {
  std::size_t n = 0;
  for (const Point& p : pattern.points)
    if (p.category == cat) ++n;
  return n;
}

// Cross-K estimator: K(h) = (1 / (lambda_i * lambda_j * W)) * sum of indicator
// d(i_k, j_l) <= h, with W the bounding-box area of the pattern and
// lambda_c = count_c / W. No edge correction.
inline double cross_k(const PointPattern& pattern, std::size_t cat_i, std::size_t cat_j,
                      double h, bool use_grid = true) {
  if (!(h > 0)) throw std::invalid_argument("cross_k: h must be > 0");
  const double n_i = static_cast<double>(category_count(pattern, cat_i));
  const double n_j = static_cast<double>(category_count(pattern, cat_j));
  if (n_i == 0) throw std::invalid_argument("cross_k: no points of category " +
                                            std::to_string(cat_i));
  if (n_j == 0) throw std::invalid_argument("cross_k: no points of category " +
                                            std::to_string(cat_j));
  const double area = detail::bounding_box(pattern).area();
  if (!(area > 0))
    throw std::invalid_argument("cross_k: degenerate study area (zero bounding-box area)");
  const double lambda_i = n_i / area;
  const double lambda_j = n_j / area;
  const auto pairs = detail::count_close_pairs(pattern, cat_i, cat_j, h, use_grid);
  return static_cast<double>(pairs) / (lambda_i * lambda_j * area);
}

// ---------------------------------------------------------------------------
// Participation ratio / index (clique instance semantics)
// ---------------------------------------------------------------------------

namespace detail {

// Marks, for each category in C, which of its points appear in at least one
// clique instance (one point per category, all pairwise distances <= h).
inline std::map<std::size_t, std::vector<bool>> participation_marks(
    const PointPattern& pattern, const std::vector<std::size_t>& subset, double h) {
  std::map<std::size_t, std::vector<std::size_t>> members;  // category -> point ids
  for (const std::size_t c : subset) members[c];            // keep requested categories only
  for (std::size_t i = 0; i < pattern.points.size(); ++i) {
    auto it = members.find(pattern.points[i].category);
    if (it != members.end()) it->second.push_back(i);
  }

  std::map<std::size_t, std::vector<bool>> marks;
  for (const auto& [c, ids] : members) marks[c] = std::vector<bool>(ids.size(), false);

  // Pairwise case handled directly; larger subsets extend depth-first.
  std::vector<std::size_t> cats(members.size());
  {
    std::size_t t = 0;
    for (const auto& [c, ids] : members) cats[t++] = c;
  }
  std::vector<std::size_t> chosen;  // point ids per level
  auto extend = [&](auto&& self, std::size_t level) -> void {
    if (level == cats.size()) {
      for (std::size_t t = 0; t < chosen.size(); ++t) {
        const auto& ids = members.at(cats[t]);
        const auto pos = std::lower_bound(ids.begin(), ids.end(), chosen[t]) - ids.begin();
        marks.at(cats[t])[static_cast<std::size_t>(pos)] = true;
      }
      return;
    }
    for (const std::size_t cand : members.at(cats[level])) {
      bool ok = true;
      for (const std::size_t prev : chosen)
        if (!within(pattern.points[cand], pattern.points[prev], h)) {
          ok = false;
          break;
        }
      if (!ok) continue;
      chosen.push_back(cand);
      self(self, level + 1);
      chosen.pop_back();
    }
  };
  extend(extend, 0);
  return marks;
}

}  // namespace detail

// Fraction of cat_f points that appear in at least one instance of the
// co-location C under the h-neighbor relation.
inline double participation_ratio(const PointPattern& pattern,
                                  const std::vector<std::size_t>& subset, std::size_t cat_f,
                                  double h) {
  std::set<std::size_t> cats(subset.begin(), subset.end());
  if (cats.size() < 2)
    throw std::invalid_argument("participation_ratio: subset needs >= 2 distinct categories");
  if (!cats.count(cat_f))
    throw std::invalid_argument("participation_ratio: category not in subset");
  const std::size_t n_f = category_count(pattern, cat_f);
  if (n_f == 0)
    throw std::invalid_argument("participation_ratio: no points of category " +
                                std::to_string(cat_f));
  std::vector<std::size_t> canon(cats.begin(), cats.end());
  const auto marks = detail::participation_marks(pattern, canon, h);
  const auto& flags = marks.at(cat_f);
  std::size_t participating = 0;
  for (const bool b : flags) participating += b ? 1 : 0;
  return static_cast<double>(participating) / static_cast<double>(n_f);
}

// Minimum participation ratio over the subset's categories (anti-monotone).
inline double participation_index(const PointPattern& pattern,
                                  const std::vector<std::size_t>& subset, double h) {
  std::set<std::size_t> cats(subset.begin(), subset.end());
  if (cats.size() < 2)
    throw std::invalid_argument("participation_index: subset needs >= 2 distinct categories");
  double pi = 1.0;
  for (const std::size_t c : cats)
    pi = std::min(pi, participation_ratio(pattern, subset, c, h));
  return pi;
}

// ---------------------------------------------------------------------------
// Feature vectors
// ---------------------------------------------------------------------------

enum class Measure { kParticipationIndex, kCrossK };

struct ColocFeatures {
  std::vector<double> values;          // ordered pairs x thresholds
  std::vector<std::string> columns;    // "<catA>~<catB>@<h>"
};

// Features over ordered category pairs (lexicographic by id) and ascending
// thresholds; length g*(g-1)*|H|. A pair with a missing category contributes
// 0 (the estimators are undefined there).
inline ColocFeatures features(const PointPattern& pattern, std::size_t num_categories,
                              Measure measure, const ThresholdSet& thresholds,
                              const CategoryVocabulary* vocab = nullptr) {
  thresholds.validate();
  ColocFeatures out;
  for (std::size_t a = 0; a < num_categories; ++a)
    for (std::size_t b = 0; b < num_categories; ++b) {
      if (a == b) continue;
      for (const double h : thresholds.values) {
        double v = 0.0;
        if (category_count(pattern, a) > 0 && category_count(pattern, b) > 0) {
          v = measure == Measure::kCrossK ? cross_k(pattern, a, b, h)
                                          : participation_index(pattern, {a, b}, h);
        }
        out.values.push_back(v);
        const std::string na = vocab ? vocab->name(a) : "C" + std::to_string(a);
        const std::string nb = vocab ? vocab->name(b) : "C" + std::to_string(b);
        out.columns.push_back(na + "~" + nb + "@" + detail::format_double(h));
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Baseline classifiers
// ---------------------------------------------------------------------------

struct FeatureMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;  // row-major

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

namespace detail {

inline double gini(const std::vector<std::size_t>& counts, std::size_t total) {
  if (total == 0) return 0.0;
  double g = 1.0;
  for (const std::size_t c : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    g -= p * p;
  }
  return g;
}

}  // namespace detail

// Axis-aligned Gini tree limited to two split levels. A node only splits when
// some threshold strictly reduces impurity.
class DepthTwoTree {
public:
  struct Node {
    int feature = -1;  // -1 = leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    std::vector<double> class_probs;
  };

  void fit(const FeatureMatrix& x, const std::vector<std::size_t>& y,
           std::size_t num_classes, const std::vector<std::size_t>* feature_subset = nullptr) {
    if (x.rows == 0) throw std::invalid_argument("tree: empty training set");
    if (x.rows != y.size()) throw std::invalid_argument("tree: label count mismatch");
    num_classes_ = num_classes;
    std::set<std::size_t> distinct(y.begin(), y.end());
    if (distinct.size() < 2)
      throw std::invalid_argument("tree: training labels contain a single class");
    std::vector<std::size_t> rows(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) rows[i] = i;
    nodes_.clear();
    build(x, y, rows, 0, feature_subset);
  }

  std::size_t predict_row(const double* row) const {
    std::size_t node = 0;
    while (nodes_[node].feature >= 0) {
      node = row[nodes_[node].feature] <= nodes_[node].threshold
                 ? static_cast<std::size_t>(nodes_[node].left)
                 : static_cast<std::size_t>(nodes_[node].right);
    }
    const auto& probs = nodes_[node].class_probs;
    return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) -
                                    probs.begin());
  }

  std::vector<std::size_t> predict(const FeatureMatrix& x) const {
    std::vector<std::size_t> out(x.rows);
    for (std::size_t r = 0; r < x.rows; ++r) out[r] = predict_row(&x.values[r * x.cols]);
    return out;
  }

  const std::vector<Node>& nodes() const { return nodes_; }

private:
  std::size_t build(const FeatureMatrix& x, const std::vector<std::size_t>& y,
                    const std::vector<std::size_t>& rows, std::size_t depth,
                    const std::vector<std::size_t>* feature_subset) {
    const std::size_t id = nodes_.size();
    nodes_.emplace_back();
    std::vector<std::size_t> counts(num_classes_, 0);
    for (const std::size_t r : rows) ++counts[y[r]];
    {
      Node& n = nodes_[id];
      n.class_probs.resize(num_classes_);
      for (std::size_t c = 0; c < num_classes_; ++c)
        n.class_probs[c] = static_cast<double>(counts[c]) / static_cast<double>(rows.size());
    }
    if (depth >= 2) return id;

    const double parent_gini = detail::gini(counts, rows.size());
    double best_gain = 1e-12;  // require strictly positive improvement
    int best_feature = -1;
    double best_threshold = 0.0;

    std::vector<std::size_t> candidate_features;
    if (feature_subset)
      candidate_features = *feature_subset;
    else
      for (std::size_t f = 0; f < x.cols; ++f) candidate_features.push_back(f);

    std::vector<std::pair<double, std::size_t>> order(rows.size());
    for (const std::size_t f : candidate_features) {
      for (std::size_t i = 0; i < rows.size(); ++i)
        order[i] = {x.at(rows[i], f), y[rows[i]]};
      std::sort(order.begin(), order.end());
      std::vector<std::size_t> left_counts(num_classes_, 0);
      std::size_t n_left = 0;
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        ++left_counts[order[i].second];
        ++n_left;
        if (order[i].first == order[i + 1].first) continue;
        std::vector<std::size_t> right_counts(num_classes_, 0);
        for (std::size_t c = 0; c < num_classes_; ++c)
          right_counts[c] = counts[c] - left_counts[c];
        const std::size_t n_right = rows.size() - n_left;
        const double w_l = static_cast<double>(n_left) / static_cast<double>(rows.size());
        const double w_r = static_cast<double>(n_right) / static_cast<double>(rows.size());
        const double gain = parent_gini - w_l * detail::gini(left_counts, n_left) -
                            w_r * detail::gini(right_counts, n_right);
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = 0.5 * (order[i].first + order[i + 1].first);
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<std::size_t> left_rows, right_rows;
    for (const std::size_t r : rows) {
      if (x.at(r, static_cast<std::size_t>(best_feature)) <= best_threshold)
        left_rows.push_back(r);
      else
        right_rows.push_back(r);
    }
    const std::size_t l = build(x, y, left_rows, depth + 1, feature_subset);
    const std::size_t r = build(x, y, right_rows, depth + 1, feature_subset);
    nodes_[id].feature = best_feature;
    nodes_[id].threshold = best_threshold;
    nodes_[id].left = static_cast<int>(l);
    nodes_[id].right = static_cast<int>(r);
    return id;
  }

  std::vector<Node> nodes_;
  std::size_t num_classes_ = 0;
};

// 50 bootstrapped depth-2 trees with sqrt(F) feature subsampling; majority
// vote, ties to the lowest class id.
class BaggedForest {
public:
  explicit BaggedForest(std::size_t num_trees = 50, std::uint64_t seed = 0)
      : num_trees_(num_trees), seed_(seed) {}

  void fit(const FeatureMatrix& x, const std::vector<std::size_t>& y,
           std::size_t num_classes) {
    std::set<std::size_t> distinct(y.begin(), y.end());
    if (distinct.size() < 2)
      throw std::invalid_argument("forest: training labels contain a single class");
    num_classes_ = num_classes;
    trees_.clear();
    Rng root = Rng(seed_).split("forest");
    const std::size_t n_feat = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(x.cols)))));
    for (std::size_t b = 0; b < num_trees_; ++b) {
      Rng rng = root.split(b);
      FeatureMatrix boot;
      boot.cols = x.cols;
      std::vector<std::size_t> boot_y;
      // resample until both classes appear, so each tree can split
      for (int attempt = 0; attempt < 64; ++attempt) {
        boot.values.clear();
        boot_y.clear();
        for (std::size_t i = 0; i < x.rows; ++i) {
          const std::size_t r = rng.below(x.rows);
          boot.values.insert(boot.values.end(), x.values.begin() + r * x.cols,
                             x.values.begin() + (r + 1) * x.cols);
          boot_y.push_back(y[r]);
        }
        std::set<std::size_t> seen(boot_y.begin(), boot_y.end());
        if (seen.size() >= 2) break;
      }
      boot.rows = boot_y.size();
      const std::vector<std::size_t> feats = rng.sample_without_replacement(x.cols, n_feat);
      DepthTwoTree tree;
      tree.fit(boot, boot_y, num_classes, &feats);
      trees_.push_back(std::move(tree));
    }
  }

  std::size_t predict_row(const double* row) const {
    std::vector<std::size_t> votes(num_classes_, 0);
    for (const DepthTwoTree& t : trees_) ++votes[t.predict_row(row)];
    return static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) -
                                    votes.begin());
  }

  std::vector<std::size_t> predict(const FeatureMatrix& x) const {
    std::vector<std::size_t> out(x.rows);
    for (std::size_t r = 0; r < x.rows; ++r) out[r] = predict_row(&x.values[r * x.cols]);
    return out;
  }

  const std::vector<DepthTwoTree>& trees() const { return trees_; }

private:
  std::size_t num_trees_;
  std::uint64_t seed_;
  std::size_t num_classes_ = 0;
  std::vector<DepthTwoTree> trees_;
};

// Fully connected classifier on the tensor core: leaky-relu hidden layers
// (four of 2048 units by default), cross-entropy, full-batch Adam. Inputs are
// standardized with training-set statistics.
struct MlpConfig {
  std::vector<std::size_t> hidden{2048, 2048, 2048, 2048};
  std::size_t epochs = 200;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

class MlpClassifier {
public:
  explicit MlpClassifier(MlpConfig cfg = {}) : cfg_(cfg) {}

  void fit(const FeatureMatrix& x, const std::vector<std::size_t>& y,
           std::size_t num_classes) {
    std::set<std::size_t> distinct(y.begin(), y.end());
    if (distinct.size() < 2)
      throw std::invalid_argument("mlp: training labels contain a single class");
    num_classes_ = num_classes;
    fit_standardization(x);

    Rng rng = Rng(cfg_.seed).split("mlp");
    weights_.clear();
    biases_.clear();
    std::size_t fan_in = x.cols;
    std::vector<std::size_t> widths = cfg_.hidden;
    widths.push_back(num_classes);
    for (const std::size_t w : widths) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      Tensor wt = Tensor::zeros({fan_in, w});
      for (auto& v : wt.data()) v = rng.uniform(-bound, bound);
      weights_.push_back(wt.requires_grad_(tape_));
      biases_.push_back(Tensor::zeros({w}).requires_grad_(tape_));
      fan_in = w;
    }
    std::vector<Tensor> params;
    for (auto& w : weights_) params.push_back(w);
    for (auto& b : biases_) params.push_back(b);
    AdamConfig acfg;
    acfg.lr = cfg_.lr;
    Adam opt(params, acfg);

    Tensor input = standardized(x);
    for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
      tape_.clear();
      opt.zero_grad();
      Tensor loss = cross_entropy(forward(input), y);
      tape_.backward(loss);
      opt.step();
    }
    tape_.clear();
  }

  std::vector<std::size_t> predict(const FeatureMatrix& x) {
    NoGradGuard guard(tape_);
    Tensor logits = forward(standardized(x));
    std::vector<std::size_t> out(x.rows);
    for (std::size_t r = 0; r < x.rows; ++r) {
      const double* row = logits.data().data() + r * num_classes_;
      out[r] = static_cast<std::size_t>(std::max_element(row, row + num_classes_) - row);
    }
    return out;
  }

private:
  void fit_standardization(const FeatureMatrix& x) {
    mean_.assign(x.cols, 0.0);
    std_.assign(x.cols, 0.0);
    for (std::size_t r = 0; r < x.rows; ++r)
      for (std::size_t c = 0; c < x.cols; ++c) mean_[c] += x.at(r, c);
    for (auto& m : mean_) m /= static_cast<double>(x.rows);
    for (std::size_t r = 0; r < x.rows; ++r)
      for (std::size_t c = 0; c < x.cols; ++c) {
        const double d = x.at(r, c) - mean_[c];
        std_[c] += d * d;
      }
    for (auto& s : std_) {
      s = std::sqrt(s / static_cast<double>(x.rows));
      if (s < 1e-12) s = 1.0;  // constant feature maps to zero
    }
  }

  Tensor standardized(const FeatureMatrix& x) const {
    Tensor t = Tensor::zeros({x.rows, x.cols});
    for (std::size_t r = 0; r < x.rows; ++r)
      for (std::size_t c = 0; c < x.cols; ++c)
        t.data()[r * x.cols + c] = (x.at(r, c) - mean_[c]) / std_[c];
    return t;
  }

  Tensor forward(const Tensor& input) {
    Tensor h = input;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h = linear(h, weights_[l], biases_[l]);
      if (l + 1 < weights_.size()) h = leaky_relu(h, 0.2);
    }
    return h;
  }

  MlpConfig cfg_;
  Tape tape_;
  std::size_t num_classes_ = 0;
  std::vector<double> mean_, std_;
  std::vector<Tensor> weights_, biases_;
};

}  // namespace samcnet
