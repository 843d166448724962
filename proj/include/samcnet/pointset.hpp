#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "samcnet/rng.hpp"

// Labeled multi-category 2D point patterns: ingestion, deterministic
// splitting/sampling/augmentation, and a planted-relationship synthetic
// generator. Coordinates are 64-bit floats in pixels.

namespace samcnet {

struct Point {
  double x = 0.0;
  double y = 0.0;
  std::size_t category = 0;
};

class CategoryVocabulary {
public:
  CategoryVocabulary() = default;

  explicit CategoryVocabulary(std::vector<std::string> names) {
    for (auto& n : names) add(n);
  }

  std::size_t add(const std::string& name) {
    auto it = ids_.find(name);
    if (it != ids_.end()) return it->second;
    const std::size_t id = names_.size();
    names_.push_back(name);
    ids_.emplace(name, id);
    return id;
  }

  std::size_t id(const std::string& name) const {
    auto it = ids_.find(name);
    if (it == ids_.end())
      throw std::invalid_argument("unknown category '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return ids_.count(name) > 0; }
  const std::string& name(std::size_t id) const { return names_.at(id); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> ids_;
};

struct PointPattern {
  std::string sample_id;
  std::vector<Point> points;
  std::size_t label = 0;

  void validate(std::size_t num_categories) const {
    if (points.empty())
      throw std::invalid_argument("pattern '" + sample_id + "' has no points");
    for (const Point& p : points) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y))
        throw std::invalid_argument("pattern '" + sample_id + "' has non-finite coordinates");
      if (p.category >= num_categories)
        throw std::invalid_argument("pattern '" + sample_id + "' has category id " +
                                    std::to_string(p.category) + " >= " +
                                    std::to_string(num_categories));
    }
  }
};

struct Dataset {
  CategoryVocabulary vocabulary;
  std::vector<PointPattern> patterns;
  std::vector<std::string> class_names;

  std::size_t num_classes() const { return class_names.size(); }

  void validate() const {
    std::set<std::string> ids;
    for (const PointPattern& p : patterns) {
      p.validate(vocabulary.size());
      if (p.label >= class_names.size())
        throw std::invalid_argument("pattern '" + p.sample_id + "' label out of range");
      if (!ids.insert(p.sample_id).second)
        throw std::invalid_argument("duplicate sample_id '" + p.sample_id + "'");
    }
  }
};

// ---------------------------------------------------------------------------
// CSV ingestion: points.csv (sample_id,x,y,category) + labels.csv
// (sample_id,label), headers required.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (const char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

inline double parse_double(const std::string& s, const std::string& file, std::size_t lineno) {
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument(file + ":" + std::to_string(lineno) +
                                ": non-numeric coordinate '" + s + "'");
  }
  if (pos != s.size())
    throw std::invalid_argument(file + ":" + std::to_string(lineno) +
                                ": non-numeric coordinate '" + s + "'");
  return v;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline Dataset load_csv(const std::string& points_path, const std::string& labels_path) {
  std::ifstream pf(points_path);
  if (!pf) throw std::invalid_argument("cannot open " + points_path);
  std::ifstream lf(labels_path);
  if (!lf) throw std::invalid_argument("cannot open " + labels_path);

  std::string line;
  std::size_t lineno = 0;

  // Pass 1: collect rows in file order; vocabulary and classes get sorted
  // afterwards so ids do not depend on row order.
  struct Row {
    std::string sample;
    double x, y;
    std::string category;
  };
  std::vector<Row> rows;
  if (!std::getline(pf, line))
    throw std::invalid_argument(points_path + ": empty file (header required)");
  ++lineno;
  if (detail::split_csv_line(line) !=
      std::vector<std::string>{"sample_id", "x", "y", "category"})
    throw std::invalid_argument(points_path + ":1: expected header sample_id,x,y,category");
  std::set<std::string> category_names;
  while (std::getline(pf, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 4)
      throw std::invalid_argument(points_path + ":" + std::to_string(lineno) +
                                  ": malformed row (want 4 fields, got " +
                                  std::to_string(f.size()) + ")");
    rows.push_back({f[0], detail::parse_double(f[1], points_path, lineno),
                    detail::parse_double(f[2], points_path, lineno), f[3]});
    category_names.insert(f[3]);
  }

  std::map<std::string, std::string> label_of;
  std::set<std::string> label_names;
  lineno = 0;
  if (!std::getline(lf, line))
    throw std::invalid_argument(labels_path + ": empty file (header required)");
  ++lineno;
  if (detail::split_csv_line(line) != std::vector<std::string>{"sample_id", "label"})
    throw std::invalid_argument(labels_path + ":1: expected header sample_id,label");
  while (std::getline(lf, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 2)
      throw std::invalid_argument(labels_path + ":" + std::to_string(lineno) +
                                  ": malformed row (want 2 fields)");
    label_of[f[0]] = f[1];
    label_names.insert(f[1]);
  }

  Dataset ds;
  for (const auto& name : category_names) ds.vocabulary.add(name);  // sorted by name
  ds.class_names.assign(label_names.begin(), label_names.end());
  std::map<std::string, std::size_t> class_id;
  for (std::size_t i = 0; i < ds.class_names.size(); ++i) class_id[ds.class_names[i]] = i;

  std::map<std::string, std::size_t> pattern_of;  // sample_id -> index, insertion order kept
  for (const Row& r : rows) {
    auto it = pattern_of.find(r.sample);
    std::size_t idx;
    if (it == pattern_of.end()) {
      auto lab = label_of.find(r.sample);
      if (lab == label_of.end())
        throw std::invalid_argument(points_path + ": sample '" + r.sample +
                                    "' has no label in " + labels_path);
      idx = ds.patterns.size();
      pattern_of.emplace(r.sample, idx);
      ds.patterns.push_back({r.sample, {}, class_id.at(lab->second)});
    } else {
      idx = it->second;
    }
    ds.patterns[idx].points.push_back({r.x, r.y, ds.vocabulary.id(r.category)});
  }
  ds.validate();
  return ds;
}

inline void write_csv(const Dataset& ds, const std::string& points_path,
                      const std::string& labels_path) {
  std::ofstream pf(points_path);
  if (!pf) throw std::invalid_argument("cannot write " + points_path);
  pf << "sample_id,x,y,category\n";
  for (const PointPattern& p : ds.patterns)
    for (const Point& pt : p.points)
      pf << p.sample_id << ',' << detail::format_double(pt.x) << ','
         << detail::format_double(pt.y) << ',' << ds.vocabulary.name(pt.category) << '\n';

  std::ofstream lf(labels_path);
  if (!lf) throw std::invalid_argument("cannot write " + labels_path);
  lf << "sample_id,label\n";
  for (const PointPattern& p : ds.patterns)
    lf << p.sample_id << ',' << ds.class_names[p.label] << '\n';
}

// ---------------------------------------------------------------------------
// Splitting / sampling / augmentation
// ---------------------------------------------------------------------------

struct Split {
  Dataset train, val, test;
};

// Stratified 80/20 train/test, then 10% of train held out as validation.
inline Split split(const Dataset& ds, std::uint64_t seed) {
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.patterns.size(); ++i)
    by_class[ds.patterns[i].label].push_back(i);
  for (const auto& [cls, idx] : by_class)
    if (idx.size() < 10)
      throw std::invalid_argument("split: class '" + ds.class_names[cls] + "' has only " +
                                  std::to_string(idx.size()) + " samples (need >= 10)");

  Split out;
  out.train.vocabulary = out.val.vocabulary = out.test.vocabulary = ds.vocabulary;
  out.train.class_names = out.val.class_names = out.test.class_names = ds.class_names;

  Rng rng = Rng(seed).split("split");
  for (auto& [cls, idx] : by_class) {
    Rng crng = rng.split(cls);
    crng.shuffle(idx);
    const std::size_t n = idx.size();
    const std::size_t n_test = static_cast<std::size_t>(std::llround(0.2 * n));
    const std::size_t n_train_full = n - n_test;
    const std::size_t n_val = static_cast<std::size_t>(std::llround(0.1 * n_train_full));
    for (std::size_t i = 0; i < n; ++i) {
      const PointPattern& p = ds.patterns[idx[i]];
      if (i < n_test)
        out.test.patterns.push_back(p);
      else if (i < n_test + n_val)
        out.val.patterns.push_back(p);
      else
        out.train.patterns.push_back(p);
    }
  }
  return out;
}

// Fixed-size uniform sample: without replacement when the pattern is large
// enough; smaller patterns keep every point once and pad up to n with
// replacement, so no structure is lost on the way up.
inline PointPattern sample_points(const PointPattern& pattern, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_points: n must be >= 1");
  Rng rng = Rng(seed).split("sample");
  PointPattern out;
  out.sample_id = pattern.sample_id;
  out.label = pattern.label;
  out.points.reserve(n);
  if (pattern.points.size() >= n) {
    for (const std::size_t i : rng.sample_without_replacement(pattern.points.size(), n))
      out.points.push_back(pattern.points[i]);
  } else {
    for (const Point& p : pattern.points) out.points.push_back(p);
    for (std::size_t i = pattern.points.size(); i < n; ++i)
      out.points.push_back(pattern.points[rng.below(pattern.points.size())]);
    rng.shuffle(out.points);
  }
  return out;
}

// Clockwise rotation about the pattern centroid.
inline PointPattern rotate(const PointPattern& pattern, double degrees) {
  double cx = 0.0, cy = 0.0;
  for (const Point& p : pattern.points) {
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(pattern.points.size());
  cy /= static_cast<double>(pattern.points.size());
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  PointPattern out = pattern;
  for (Point& p : out.points) {
    const double dx = p.x - cx, dy = p.y - cy;
    p.x = cx + dx * c + dy * s;
    p.y = cy - dx * s + dy * c;
  }
  return out;
}

// Each sample emitted six times: original plus 12..60 degree clockwise
// rotations. `rotations` overrides the count for cheaper runs.
inline Dataset augment(const Dataset& train, std::size_t rotations = 5) {
  Dataset out;
  out.vocabulary = train.vocabulary;
  out.class_names = train.class_names;
  for (const PointPattern& p : train.patterns) {
    out.patterns.push_back(p);
    for (std::size_t k = 1; k <= rotations; ++k) {
      PointPattern r = rotate(p, 12.0 * static_cast<double>(k));
      r.sample_id = p.sample_id + "_rot" + std::to_string(12 * k);
      out.patterns.push_back(std::move(r));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

struct PlantedRelationship {
  std::vector<std::size_t> categories;  // first entry is the parent category
  double radius = 0.0;                  // pixels
  double participation = 1.0;           // fraction of parents that get children
};

struct SyntheticSpec {
  std::size_t num_categories = 2;
  std::size_t points_per_pattern = 512;
  std::size_t patterns_per_class = 100;
  // One list per class; an empty list means pure background for that class.
  std::vector<std::vector<PlantedRelationship>> planted_relationships;
  double background_intensity = 1e-4;  // expected points per px^2 per category
  double arena_extent = 1000.0;        // arena is [0, extent]^2
  std::uint64_t seed = 0;

  void validate() const {
    if (num_categories < 1) throw std::invalid_argument("synthetic: need >= 1 category");
    if (points_per_pattern < 1) throw std::invalid_argument("synthetic: need >= 1 point");
    if (planted_relationships.size() < 2)
      throw std::invalid_argument("synthetic: need >= 2 classes");
    if (arena_extent <= 0) throw std::invalid_argument("synthetic: arena_extent <= 0");
    for (const auto& per_class : planted_relationships)
      for (const PlantedRelationship& r : per_class) {
        if (r.categories.size() < 2)
          throw std::invalid_argument("synthetic: planted subset needs >= 2 categories");
        for (const std::size_t c : r.categories)
          if (c >= num_categories)
            throw std::invalid_argument("synthetic: planted category out of range");
        if (r.radius <= 0) throw std::invalid_argument("synthetic: radius must be > 0");
        if (r.participation <= 0 || r.participation > 1)
          throw std::invalid_argument("synthetic: participation must be in (0,1]");
      }
    // Padding a mildly undersized pattern is fine; refusing guards against
    // arenas that cannot supply even a tenth of the requested points.
    const double expected = background_intensity * arena_extent * arena_extent *
                            static_cast<double>(num_categories);
    const double floor = std::max(1.0, 0.1 * static_cast<double>(points_per_pattern));
    if (expected < floor)
      throw std::invalid_argument(
          "synthetic: arena too small for requested intensity (expected " +
          std::to_string(expected) + " background points for points_per_pattern " +
          std::to_string(points_per_pattern) + ")");
  }
};

// Poisson background per category plus parent-child clusters: for each planted
// relationship, a `participation` fraction of the first category's points get
// one child of every other listed category, placed uniformly in the radius-r
// disk (clamped to the arena). Patterns are then resampled to the exact
// requested size.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Dataset ds;
  for (std::size_t c = 0; c < spec.num_categories; ++c)
    ds.vocabulary.add("C" + std::to_string(c));
  for (std::size_t y = 0; y < spec.planted_relationships.size(); ++y)
    ds.class_names.push_back("class" + std::to_string(y));

  Rng root = Rng(spec.seed).split("synthetic");
  const double area = spec.arena_extent * spec.arena_extent;
  const double lambda = spec.background_intensity * area;

  for (std::size_t cls = 0; cls < spec.planted_relationships.size(); ++cls) {
    Rng class_rng = root.split(cls);
    for (std::size_t k = 0; k < spec.patterns_per_class; ++k) {
      Rng rng = class_rng.split(k);
      PointPattern pat;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "class%zu_p%04zu", cls, k);
      pat.sample_id = buf;
      pat.label = cls;

      std::vector<std::vector<std::size_t>> by_category(spec.num_categories);
      for (std::size_t c = 0; c < spec.num_categories; ++c) {
        const std::size_t n = rng.poisson(lambda);
        for (std::size_t i = 0; i < n; ++i) {
          by_category[c].push_back(pat.points.size());
          pat.points.push_back(
              {rng.uniform(0, spec.arena_extent), rng.uniform(0, spec.arena_extent), c});
        }
      }
      for (const PlantedRelationship& rel : spec.planted_relationships[cls]) {
        const auto& parents = by_category[rel.categories[0]];
        const std::size_t n_sel = static_cast<std::size_t>(
            std::ceil(rel.participation * static_cast<double>(parents.size())));
        for (const std::size_t pi : rng.sample_without_replacement(parents.size(), n_sel)) {
          const Point parent = pat.points[parents[pi]];
          for (std::size_t ci = 1; ci < rel.categories.size(); ++ci) {
            // uniform in the disk via rejection
            double dx, dy;
            do {
              dx = rng.uniform(-rel.radius, rel.radius);
              dy = rng.uniform(-rel.radius, rel.radius);
            } while (dx * dx + dy * dy > rel.radius * rel.radius);
            const double x = std::clamp(parent.x + dx, 0.0, spec.arena_extent);
            const double y = std::clamp(parent.y + dy, 0.0, spec.arena_extent);
            pat.points.push_back({x, y, rel.categories[ci]});
          }
        }
      }
      if (pat.points.empty())  // possible only at absurdly low intensity
        pat.points.push_back({rng.uniform(0, spec.arena_extent),
                              rng.uniform(0, spec.arena_extent), 0});
      pat = sample_points(pat, spec.points_per_pattern, rng.next_u64());
      ds.patterns.push_back(std::move(pat));
    }
  }
  ds.validate();
  return ds;
}

}  // namespace samcnet
