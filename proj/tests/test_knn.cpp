#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <vector>

#include "samcnet/knn.hpp"
#include "samcnet/rng.hpp"

using namespace samcnet;

namespace {

std::vector<Point> random_points(std::size_t n, Rng& rng, double extent = 100.0) {
  std::vector<Point> pts;
  for (std::size_t i = 0; i < n; ++i)
    pts.push_back({rng.uniform(0, extent), rng.uniform(0, extent), 0});
  return pts;
}

// Reference: full sort of all candidates per row.
NeighborGraph knn_oracle(const std::vector<double>& feats, std::size_t n, std::size_t dim,
                         std::size_t k) {
  NeighborGraph g;
  g.n = n;
  g.k = k;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double d2 = 0;
      for (std::size_t t = 0; t < dim; ++t) {
        const double d = feats[i * dim + t] - feats[j * dim + t];
        d2 += d * d;
      }
      cand.push_back({d2, j});
    }
    std::sort(cand.begin(), cand.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      for (std::size_t t = 0; t < dim; ++t) {
        const double va = feats[a.second * dim + t], vb = feats[b.second * dim + t];
        if (va != vb) return va < vb;
      }
      return a.second < b.second;
    });
    for (std::size_t j = 0; j < k; ++j) {
      g.neighbors.push_back(cand[j].second);
      g.distances.push_back(std::sqrt(cand[j].first));
    }
  }
  return g;
}

}  // namespace

TEST_CASE("knn: n = k+1 yields the complete directed graph") {
  Rng rng(1);
  auto pts = random_points(5, rng);
  NeighborGraph g = knn_coords(pts, 4);
  for (std::size_t i = 0; i < 5; ++i) {
    std::set<std::size_t> nbrs;
    for (std::size_t j = 0; j < 4; ++j) {
      REQUIRE(g.neighbor(i, j) != i);  // no self-edges
      nbrs.insert(g.neighbor(i, j));
    }
    REQUIRE(nbrs.size() == 4);
  }
}

TEST_CASE("knn: collinear hand case 0,1,3,7 with k=2") {
  std::vector<Point> pts{{0, 0, 0}, {1, 0, 0}, {3, 0, 0}, {7, 0, 0}};
  NeighborGraph g = knn_coords(pts, 2);
  REQUIRE(g.neighbor(0, 0) == 1);  // d=1
  REQUIRE(g.neighbor(0, 1) == 2);  // d=3
  REQUIRE(g.neighbor(3, 0) == 2);  // d=4
  REQUIRE(g.neighbor(3, 1) == 1);  // d=6
  REQUIRE(g.distance(0, 0) == Catch::Approx(1.0));
  REQUIRE(g.distance(3, 1) == Catch::Approx(6.0));
}

TEST_CASE("knn: distances non-decreasing per row") {
  Rng rng(2);
  auto pts = random_points(100, rng);
  NeighborGraph g = knn_coords(pts, 7);
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t j = 1; j < g.k; ++j)
      REQUIRE(g.distance(i, j) >= g.distance(i, j - 1));
}

TEST_CASE("knn: duplicate coordinates give permutation-invariant neighbor content") {
  std::vector<Point> pts{{0, 0, 0}, {5, 5, 0}, {5, 5, 0}, {9, 1, 0}, {2, 8, 0}};
  NeighborGraph g = knn_coords(pts, 2);
  // reversed input ordering
  std::vector<Point> rev(pts.rbegin(), pts.rend());
  NeighborGraph gr = knn_coords(rev, 2);
  auto content = [](const std::vector<Point>& ps, const NeighborGraph& graph, const Point& q) {
    // locate a row whose center matches q, return its neighbor coordinates
    for (std::size_t i = 0; i < ps.size(); ++i)
      if (ps[i].x == q.x && ps[i].y == q.y) {
        std::multiset<std::pair<double, double>> out;
        for (std::size_t j = 0; j < graph.k; ++j)
          out.insert({ps[graph.neighbor(i, j)].x, ps[graph.neighbor(i, j)].y});
        return out;
      }
    throw std::logic_error("point not found");
  };
  for (const Point& q : {pts[0], pts[3], pts[4]})
    REQUIRE(content(pts, g, q) == content(rev, gr, q));
}

TEST_CASE("knn: n <= k is a contract violation") {
  Rng rng(3);
  auto pts = random_points(4, rng);
  REQUIRE_THROWS_AS(knn_coords(pts, 4), std::invalid_argument);
  REQUIRE_THROWS_AS(knn_features(std::vector<double>(8, 0.0), 4, 2, 5), std::invalid_argument);
}

TEST_CASE("knn_features: F=2 features equal to coordinates match knn_coords") {
  Rng rng(4);
  auto pts = random_points(60, rng);
  std::vector<double> feats;
  for (const auto& p : pts) {
    feats.push_back(p.x);
    feats.push_back(p.y);
  }
  NeighborGraph a = knn_coords(pts, 5);
  NeighborGraph b = knn_features(feats, 60, 2, 5);
  REQUIRE(a.neighbors == b.neighbors);
  REQUIRE(a.distances == b.distances);
}

TEST_CASE("knn_features: one-hot clusters keep neighbors intra-cluster") {
  const std::size_t k = 3;
  std::vector<double> feats;
  Rng rng(5);
  // two clusters of k+1 points, one-hot on different axes with small jitter
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < k + 1; ++i) {
      feats.push_back(c == 0 ? 1.0 + rng.uniform(-0.01, 0.01) : rng.uniform(-0.01, 0.01));
      feats.push_back(c == 1 ? 1.0 + rng.uniform(-0.01, 0.01) : rng.uniform(-0.01, 0.01));
    }
  NeighborGraph g = knn_features(feats, 2 * (k + 1), 2, k);
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t j = 0; j < k; ++j)
      REQUIRE(g.neighbor(i, j) / (k + 1) == i / (k + 1));
}

TEST_CASE("knn_features: matches brute-force oracle on 50 random instances") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 20 + rng.below(180);
    const std::size_t dim = 1 + rng.below(5);
    const std::size_t k = 1 + rng.below(6);
    std::vector<double> feats(n * dim);
    for (auto& v : feats) v = rng.uniform(-10, 10);
    NeighborGraph got = knn_features(feats, n, dim, k);
    NeighborGraph want = knn_oracle(feats, n, dim, k);
    REQUIRE(got.neighbors == want.neighbors);
  }
}

TEST_CASE("knn_coords: grid fast path equals brute force") {
  Rng rng(7);
  for (const std::size_t n : {300UL, 700UL, 1500UL}) {
    auto pts = random_points(n, rng, 1000.0);
    NeighborGraph grid = knn_coords(pts, 6, /*use_grid=*/true);
    NeighborGraph brute = knn_coords(pts, 6, /*use_grid=*/false);
    REQUIRE(grid.neighbors == brute.neighbors);
    REQUIRE(grid.distances == brute.distances);
  }
}

TEST_CASE("knn: permutation equivariance") {
  Rng rng(8);
  const std::size_t n = 80, k = 4;
  auto pts = random_points(n, rng);
  NeighborGraph base = knn_coords(pts, k);

  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);  // perm[new_pos] = old index
  std::vector<Point> shuffled(n);
  std::vector<std::size_t> new_of_old(n);
  for (std::size_t p = 0; p < n; ++p) {
    shuffled[p] = pts[perm[p]];
    new_of_old[perm[p]] = p;
  }
  NeighborGraph permuted = knn_coords(shuffled, k);
  for (std::size_t old_i = 0; old_i < n; ++old_i)
    for (std::size_t j = 0; j < k; ++j)
      REQUIRE(permuted.neighbor(new_of_old[old_i], j) == new_of_old[base.neighbor(old_i, j)]);
}

TEST_CASE("knn: every row holds the k smallest distances (oracle check)") {
  Rng rng(9);
  auto pts = random_points(150, rng);
  const std::size_t k = 5;
  NeighborGraph g = knn_coords(pts, k);
  for (std::size_t i = 0; i < g.n; ++i) {
    std::vector<double> all;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (j == i) continue;
      all.push_back(std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y));
    }
    std::sort(all.begin(), all.end());
    for (std::size_t j = 0; j < k; ++j)
      REQUIRE(g.distance(i, j) == Catch::Approx(all[j]).margin(1e-12));
  }
}
