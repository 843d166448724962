#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "samcnet/pointset.hpp"

// Exact k-nearest-neighbor graphs in coordinate space (layer 1) and embedded
// feature space (later layers). Ties are broken on point CONTENT (distance,
// then the coordinate/feature vector lexicographically), never on array
// position, so results are invariant to input ordering.

namespace samcnet {

struct NeighborGraph {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::size_t> neighbors;  // n*k, row i = neighbors of i, nearest first
  std::vector<double> distances;       // n*k, non-decreasing within each row

  std::size_t neighbor(std::size_t i, std::size_t j) const { return neighbors[i * k + j]; }
  double distance(std::size_t i, std::size_t j) const { return distances[i * k + j]; }
};

namespace detail {

// Candidate ordered by (distance, content); index is carried but never
// compared except as a final arbiter between bit-identical rows, where any
// choice yields identical downstream values.
struct KnnCandidate {
  double d2;
  std::size_t idx;
};

class FeatureLess {
public:
  FeatureLess(const double* data, std::size_t dim) : data_(data), dim_(dim) {}

  bool operator()(const KnnCandidate& a, const KnnCandidate& b) const {
    if (a.d2 != b.d2) return a.d2 < b.d2;
    const double* ra = data_ + a.idx * dim_;
    const double* rb = data_ + b.idx * dim_;
    for (std::size_t i = 0; i < dim_; ++i)
      if (ra[i] != rb[i]) return ra[i] < rb[i];
    return a.idx < b.idx;
  }

private:
  const double* data_;
  std::size_t dim_;
};

inline NeighborGraph knn_brute(const double* data, std::size_t n, std::size_t dim,
                               std::size_t k) {
  NeighborGraph g;
  g.n = n;
  g.k = k;
  g.neighbors.resize(n * k);
  g.distances.resize(n * k);
  const FeatureLess less(data, dim);
  std::vector<KnnCandidate> heap;  // max-heap of the current k best
  heap.reserve(k + 1);
  for (std::size_t i = 0; i < n; ++i) {
    heap.clear();
    const double* ri = data + i * dim;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double* rj = data + j * dim;
      double d2 = 0.0;
      for (std::size_t t = 0; t < dim; ++t) {
        const double diff = ri[t] - rj[t];
        d2 += diff * diff;
      }
      KnnCandidate c{d2, j};
      if (heap.size() < k) {
        heap.push_back(c);
        std::push_heap(heap.begin(), heap.end(), less);
      } else if (less(c, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), less);
        heap.back() = c;
        std::push_heap(heap.begin(), heap.end(), less);
      }
    }
    std::sort_heap(heap.begin(), heap.end(), less);
    for (std::size_t j = 0; j < k; ++j) {
      g.neighbors[i * k + j] = heap[j].idx;
      g.distances[i * k + j] = std::sqrt(heap[j].d2);
    }
  }
  return g;
}

// Uniform-grid bucketing for 2D coordinates. Expanding ring search; a ring at
// Chebyshev cell distance r is only conclusive once the k-th best distance is
// within r*cell, so the result matches brute force exactly.
inline NeighborGraph knn_grid2d(const double* data, std::size_t n, std::size_t k) {
  double min_x = data[0], max_x = data[0], min_y = data[1], max_y = data[1];
  for (std::size_t i = 0; i < n; ++i) {
    min_x = std::min(min_x, data[i * 2]);
    max_x = std::max(max_x, data[i * 2]);
    min_y = std::min(min_y, data[i * 2 + 1]);
    max_y = std::max(max_y, data[i * 2 + 1]);
  }
  const double span = std::max({max_x - min_x, max_y - min_y, 1e-12});
  const std::size_t cells =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(n))));
  const double cell = span / static_cast<double>(cells);

  auto cell_of = [&](double v, double lo) {
    auto c = static_cast<std::size_t>((v - lo) / cell);
    return std::min(c, cells - 1);
  };
  std::vector<std::vector<std::size_t>> buckets(cells * cells);
  for (std::size_t i = 0; i < n; ++i)
    buckets[cell_of(data[i * 2 + 1], min_y) * cells + cell_of(data[i * 2], min_x)].push_back(i);

  NeighborGraph g;
  g.n = n;
  g.k = k;
  g.neighbors.resize(n * k);
  g.distances.resize(n * k);
  const FeatureLess less(data, 2);
  std::vector<KnnCandidate> heap;
  heap.reserve(k + 1);
  for (std::size_t i = 0; i < n; ++i) {
    heap.clear();
    const double xi = data[i * 2], yi = data[i * 2 + 1];
    const std::size_t cx = cell_of(xi, min_x), cy = cell_of(yi, min_y);
    auto visit = [&](std::size_t bx, std::size_t by) {
      for (const std::size_t j : buckets[by * cells + bx]) {
        if (j == i) continue;
        const double dx = xi - data[j * 2], dy = yi - data[j * 2 + 1];
        KnnCandidate c{dx * dx + dy * dy, j};
        if (heap.size() < k) {
          heap.push_back(c);
          std::push_heap(heap.begin(), heap.end(), less);
        } else if (less(c, heap.front())) {
          std::pop_heap(heap.begin(), heap.end(), less);
          heap.back() = c;
          std::push_heap(heap.begin(), heap.end(), less);
        }
      }
    };
    for (std::size_t ring = 0; ring < cells; ++ring) {
      const std::size_t x_lo = cx >= ring ? cx - ring : 0;
      const std::size_t x_hi = std::min(cx + ring, cells - 1);
      const std::size_t y_lo = cy >= ring ? cy - ring : 0;
      const std::size_t y_hi = std::min(cy + ring, cells - 1);
      for (std::size_t by = y_lo; by <= y_hi; ++by)
        for (std::size_t bx = x_lo; bx <= x_hi; ++bx) {
          // exact ring membership; clamped bounds alone would re-visit cells
          const std::size_t dx = bx > cx ? bx - cx : cx - bx;
          const std::size_t dy = by > cy ? by - cy : cy - by;
          if (std::max(dx, dy) == ring) visit(bx, by);
        }
      if (heap.size() == k) {
        // Unvisited points are >= ring*cell away; strict < so a boundary tie
        // can still be re-ranked by the content key.
        const double guaranteed = static_cast<double>(ring) * cell;
        if (heap.front().d2 < guaranteed * guaranteed) break;
      }
      if (x_lo == 0 && y_lo == 0 && x_hi == cells - 1 && y_hi == cells - 1) break;
    }
    std::sort_heap(heap.begin(), heap.end(), less);
    for (std::size_t j = 0; j < k; ++j) {
      g.neighbors[i * k + j] = heap[j].idx;
      g.distances[i * k + j] = std::sqrt(heap[j].d2);
    }
  }
  return g;
}

}  // namespace detail

inline NeighborGraph knn_features(const std::vector<double>& features, std::size_t n,
                                  std::size_t dim, std::size_t k) {
  if (n <= k)
    throw std::invalid_argument("knn: need n > k, got n=" + std::to_string(n) +
                                " k=" + std::to_string(k));
  if (features.size() != n * dim) throw std::invalid_argument("knn: feature buffer size mismatch");
  return detail::knn_brute(features.data(), n, dim, k);
}

inline NeighborGraph knn_coords(const std::vector<Point>& points, std::size_t k,
                                bool use_grid = true) {
  const std::size_t n = points.size();
  if (n <= k)
    throw std::invalid_argument("knn: need n > k, got n=" + std::to_string(n) +
                                " k=" + std::to_string(k));
  std::vector<double> coords(n * 2);
  for (std::size_t i = 0; i < n; ++i) {
    coords[i * 2] = points[i].x;
    coords[i * 2 + 1] = points[i].y;
  }
  if (use_grid && n > 256) return detail::knn_grid2d(coords.data(), n, k);
  return detail::knn_brute(coords.data(), n, 2, k);
}

inline NeighborGraph knn_coords(const PointPattern& pattern, std::size_t k,
                                bool use_grid = true) {
  return knn_coords(pattern.points, k, use_grid);
}

}  // namespace samcnet
