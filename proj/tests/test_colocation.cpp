#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "samcnet/colocation.hpp"
#include "samcnet/metrics.hpp"
#include "samcnet/pointset.hpp"

using namespace samcnet;

namespace {

PointPattern random_pattern(std::size_t n, std::size_t categories, Rng& rng,
                            double extent = 100.0) {
  PointPattern p;
  p.sample_id = "r";
  for (std::size_t i = 0; i < n; ++i)
    p.points.push_back({rng.uniform(0, extent), rng.uniform(0, extent),
                        rng.below(categories)});
  return p;
}

// Exhaustive oracle: enumerate every tuple (one point per category) and check
// all pairwise distances. Used only on tiny patterns.
double participation_ratio_oracle(const PointPattern& p, const std::vector<std::size_t>& subset,
                                  std::size_t cat_f, double h) {
  std::vector<std::vector<std::size_t>> members;
  for (const std::size_t c : subset) {
    members.emplace_back();
    for (std::size_t i = 0; i < p.points.size(); ++i)
      if (p.points[i].category == c) members.back().push_back(i);
  }
  std::set<std::size_t> participating;
  std::vector<std::size_t> pick(subset.size(), 0);
  const std::size_t f_slot =
      std::find(subset.begin(), subset.end(), cat_f) - subset.begin();
  auto ok = [&](const std::vector<std::size_t>& ids) {
    for (std::size_t a = 0; a < ids.size(); ++a)
      for (std::size_t b = a + 1; b < ids.size(); ++b) {
        const double dx = p.points[ids[a]].x - p.points[ids[b]].x;
        const double dy = p.points[ids[a]].y - p.points[ids[b]].y;
        if (dx * dx + dy * dy > h * h) return false;
      }
    return true;
  };
  std::vector<std::size_t> ids(subset.size());
  auto rec = [&](auto&& self, std::size_t level) -> void {
    if (level == subset.size()) {
      if (ok(ids)) participating.insert(ids[f_slot]);
      return;
    }
    for (const std::size_t i : members[level]) {
      ids[level] = i;
      self(self, level + 1);
    }
  };
  rec(rec, 0);
  std::size_t n_f = members[f_slot].size();
  return n_f == 0 ? 0.0 : double(participating.size()) / double(n_f);
}

}  // namespace

TEST_CASE("cross_k: no close pairs gives zero") {
  PointPattern p;
  p.sample_id = "s";
  p.points = {{0, 0, 0}, {100, 100, 1}, {0, 100, 2}, {100, 0, 2}};
  REQUIRE(cross_k(p, 0, 1, 5.0) == 0.0);
}

TEST_CASE("cross_k: hand evaluation in a unit-area box") {
  // anchor points of a third category pin the bounding box to area 1
  PointPattern p;
  p.sample_id = "s";
  p.points = {{0.2, 0.3, 0}, {0.2 + 0.3, 0.3 + 0.4, 1}, {0, 0, 2}, {1, 1, 2}};
  // lambda_0 = lambda_1 = 1, one pair at distance 0.5 <= 1 -> K = 1
  REQUIRE(cross_k(p, 0, 1, 1.0) == Catch::Approx(1.0));
  REQUIRE(cross_k(p, 1, 0, 1.0) == Catch::Approx(1.0));
}

TEST_CASE("cross_k: missing category and degenerate area raise") {
  PointPattern p;
  p.sample_id = "s";
  p.points = {{0, 0, 0}, {1, 0, 0}};
  REQUIRE_THROWS_WITH(cross_k(p, 0, 1, 1.0), Catch::Matchers::ContainsSubstring("category"));
  PointPattern line;
  line.sample_id = "line";
  line.points = {{0, 0, 0}, {1, 0, 1}};
  REQUIRE_THROWS_WITH(cross_k(line, 0, 1, 1.0),
                      Catch::Matchers::ContainsSubstring("degenerate"));
}

TEST_CASE("cross_k: CSR expectation pi*h^2 within 15% (reduced-size check)") {
  // acceptance runs the full 2000+2000 x 20 seed version
  double total_ratio = 0.0;
  const int seeds = 5;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(1000 + s);
    PointPattern p;
    p.sample_id = "csr";
    for (int i = 0; i < 1500; ++i)
      p.points.push_back({rng.next_double(), rng.next_double(), rng.below(2)});
    const double h = 0.1;
    total_ratio += cross_k(p, 0, 1, h) / (3.14159265358979 * h * h);
  }
  REQUIRE(std::fabs(total_ratio / seeds - 1.0) < 0.15);
}

TEST_CASE("pair counting: grid path equals brute force up to 5000 points") {
  Rng rng(2);
  for (const std::size_t n : {50UL, 500UL, 5000UL}) {
    PointPattern p = random_pattern(n, 3, rng, 1000.0);
    for (const double h : {10.0, 50.0, 200.0}) {
      REQUIRE(detail::count_close_pairs(p, 0, 1, h, true) ==
              detail::count_close_pairs(p, 0, 1, h, false));
      REQUIRE(detail::count_close_pairs(p, 2, 2, h, true) ==
              detail::count_close_pairs(p, 2, 2, h, false));
    }
  }
}

TEST_CASE("participation_ratio: hand-enumerated two-category case") {
  // A-points a1,a2,a3; B-points b1,b2; close pairs only (a1,b1),(a2,b1)
  PointPattern p;
  p.sample_id = "s";
  p.points = {{0, 0, 0}, {1, 0, 0}, {50, 50, 0}, {0.5, 0.5, 1}, {80, 80, 1}};
  const double h = 2.0;
  REQUIRE(participation_ratio(p, {0, 1}, 0, h) == Catch::Approx(2.0 / 3.0));
  REQUIRE(participation_ratio(p, {0, 1}, 1, h) == Catch::Approx(0.5));
  REQUIRE(participation_index(p, {0, 1}, h) == Catch::Approx(0.5));
}

TEST_CASE("participation_ratio: all participate / none participate") {
  PointPattern p;
  p.sample_id = "s";
  p.points = {{0, 0, 0}, {1, 1, 1}, {2, 0, 0}, {1, 0, 1}};
  REQUIRE(participation_ratio(p, {0, 1}, 0, 10.0) == 1.0);
  REQUIRE(participation_ratio(p, {0, 1}, 0, 0.1) == 0.0);
  REQUIRE(participation_index(p, {0, 1}, 0.1) == 0.0);
}

TEST_CASE("participation_ratio: contract violations") {
  PointPattern p;
  p.sample_id = "s";
  p.points = {{0, 0, 0}, {1, 1, 1}};
  REQUIRE_THROWS_AS(participation_ratio(p, {0}, 0, 1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(participation_ratio(p, {0, 1}, 2, 1.0), std::invalid_argument);
  PointPattern q;
  q.sample_id = "q";
  q.points = {{0, 0, 0}, {1, 1, 2}};
  REQUIRE_THROWS_AS(participation_ratio(q, {0, 1}, 1, 1.0), std::invalid_argument);
}

TEST_CASE("participation matches the exhaustive oracle on 100 small patterns") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    PointPattern p = random_pattern(5 + rng.below(26), 3, rng, 30.0);
    const double h = 5.0 + rng.next_double() * 15.0;
    for (const auto& subset :
         std::vector<std::vector<std::size_t>>{{0, 1}, {0, 2}, {1, 2}, {0, 1, 2}}) {
      bool all_present = true;
      for (const std::size_t c : subset)
        if (category_count(p, c) == 0) all_present = false;
      if (!all_present) continue;
      for (const std::size_t f : subset)
        REQUIRE(participation_ratio(p, subset, f, h) ==
                participation_ratio_oracle(p, subset, f, h));
    }
  }
}

TEST_CASE("participation_index: anti-monotone over subset chains") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    PointPattern p = random_pattern(8 + rng.below(20), 3, rng, 25.0);
    if (category_count(p, 0) == 0 || category_count(p, 1) == 0 || category_count(p, 2) == 0)
      continue;
    const double h = 4.0 + rng.next_double() * 10.0;
    const double pi3 = participation_index(p, {0, 1, 2}, h);
    for (const auto& pair :
         std::vector<std::vector<std::size_t>>{{0, 1}, {0, 2}, {1, 2}}) {
      const double pi2 = participation_index(p, pair, h);
      REQUIRE(pi3 <= pi2 + 1e-15);
      REQUIRE(pi2 >= 0.0);
      REQUIRE(pi2 <= 1.0);
    }
  }
}

TEST_CASE("features: g=3 single threshold gives a length-6 vector") {
  Rng rng(5);
  PointPattern p = random_pattern(60, 3, rng);
  ThresholdSet H{{50.0}};
  ColocFeatures f = features(p, 3, Measure::kParticipationIndex, H);
  REQUIRE(f.values.size() == 6);  // g(g-1)*|H|
  REQUIRE(f.columns.size() == 6);
  ColocFeatures k2 = features(p, 3, Measure::kCrossK, ThresholdSet{{25.0, 50.0}});
  REQUIRE(k2.values.size() == 12);
}

TEST_CASE("features: invariant to point order and rigid rotation") {
  Rng rng(6);
  PointPattern p = random_pattern(80, 3, rng);
  ThresholdSet H{{30.0}};
  ColocFeatures base = features(p, 3, Measure::kParticipationIndex, H);
  PointPattern shuffled = p;
  rng.shuffle(shuffled.points);
  REQUIRE(features(shuffled, 3, Measure::kParticipationIndex, H).values == base.values);

  PointPattern rotated = rotate(p, 33.0);
  ColocFeatures rot = features(rotated, 3, Measure::kParticipationIndex, H);
  for (std::size_t i = 0; i < base.values.size(); ++i)
    REQUIRE(rot.values[i] == Catch::Approx(base.values[i]).margin(1e-12));
}

TEST_CASE("features: planted pair exceeds the CSR value at h=50") {
  // points_per_pattern sits above the expected raw count, so patterns are
  // padded rather than thinned and planted pairs survive intact
  SyntheticSpec spec;
  spec.num_categories = 2;
  spec.points_per_pattern = 160;
  spec.patterns_per_class = 6;
  spec.planted_relationships = {{{{0, 1}, 30.0, 0.9}}, {}};
  spec.background_intensity = 1.4e-4;
  spec.arena_extent = 600.0;
  spec.seed = 77;
  Dataset ds = generate_synthetic(spec);
  ThresholdSet H{{50.0}};
  double planted = 0, csr = 0;
  for (const auto& p : ds.patterns) {
    const double v = features(p, 2, Measure::kParticipationIndex, H).values[0];
    (p.label == 0 ? planted : csr) += v / 6.0;
  }
  REQUIRE(planted > csr);
}

TEST_CASE("tree: linearly separable feature reaches training accuracy 1") {
  FeatureMatrix x;
  x.rows = 20;
  x.cols = 1;
  std::vector<std::size_t> y;
  for (int i = 0; i < 20; ++i) {
    x.values.push_back(i < 10 ? double(i) : double(i) + 100.0);
    y.push_back(i < 10 ? 0 : 1);
  }
  DepthTwoTree tree;
  tree.fit(x, y, 2);
  REQUIRE(accuracy_of(tree.predict(x), y) == 1.0);
}

TEST_CASE("tree: refuses single-class labels") {
  FeatureMatrix x;
  x.rows = 4;
  x.cols = 1;
  x.values = {1, 2, 3, 4};
  std::vector<std::size_t> y{1, 1, 1, 1};
  DepthTwoTree tree;
  REQUIRE_THROWS_AS(tree.fit(x, y, 2), std::invalid_argument);
  BaggedForest forest(10, 1);
  REQUIRE_THROWS_AS(forest.fit(x, y, 2), std::invalid_argument);
  MlpClassifier mlp;
  REQUIRE_THROWS_AS(mlp.fit(x, y, 2), std::invalid_argument);
}

TEST_CASE("forest: unanimous trees reproduce the single-tree prediction") {
  FeatureMatrix x;
  x.rows = 40;
  x.cols = 2;
  std::vector<std::size_t> y;
  Rng rng(7);
  for (int i = 0; i < 40; ++i) {
    const double v = i < 20 ? rng.uniform(0, 1) : rng.uniform(10, 11);
    x.values.push_back(v);
    x.values.push_back(rng.uniform(0, 1));
    y.push_back(i < 20 ? 0 : 1);
  }
  DepthTwoTree tree;
  tree.fit(x, y, 2);
  BaggedForest forest(50, 3);
  forest.fit(x, y, 2);
  REQUIRE(forest.predict(x) == tree.predict(x));  // trivially separable: all agree
}

TEST_CASE("xor arrangement: depth-2 tree fails, mlp succeeds") {
  // exactly symmetric XOR: every axis-aligned root split has zero Gini gain,
  // so the tree stays a majority stump
  FeatureMatrix x;
  x.cols = 2;
  std::vector<std::size_t> y;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int rep = 0; rep < 25; ++rep) {
        x.values.push_back(double(a));
        x.values.push_back(double(b));
        y.push_back(static_cast<std::size_t>(a ^ b));
      }
  x.rows = 100;

  DepthTwoTree tree;
  tree.fit(x, y, 2);
  REQUIRE(accuracy_of(tree.predict(x), y) <= 0.75);

  MlpConfig mcfg;
  mcfg.hidden = {32, 32, 32, 32};
  mcfg.epochs = 400;
  mcfg.lr = 1e-2;
  mcfg.seed = 5;
  MlpClassifier mlp(mcfg);
  mlp.fit(x, y, 2);
  REQUIRE(accuracy_of(mlp.predict(x), y) >= 0.9);
}

TEST_CASE("threshold set validation") {
  REQUIRE_THROWS_AS(ThresholdSet{{}}.validate(), std::invalid_argument);
  REQUIRE_THROWS_AS((ThresholdSet{{5.0, 5.0}}).validate(), std::invalid_argument);
  REQUIRE_THROWS_AS((ThresholdSet{{-1.0, 5.0}}).validate(), std::invalid_argument);
  REQUIRE_NOTHROW((ThresholdSet{{25.0, 50.0}}).validate());
}
