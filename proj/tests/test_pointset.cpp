#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "samcnet/colocation.hpp"
#include "samcnet/pointset.hpp"

using namespace samcnet;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  fs::path dir = fs::temp_directory_path() / ("samcnet_pointset_" + std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p);
  out << content;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

Dataset make_balanced(std::size_t per_class, std::size_t points_each = 3) {
  Dataset ds;
  ds.vocabulary.add("A");
  ds.vocabulary.add("B");
  ds.class_names = {"neg", "pos"};
  Rng rng(7);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      PointPattern p;
      p.sample_id = "s" + std::to_string(c) + "_" + std::to_string(i);
      p.label = c;
      for (std::size_t t = 0; t < points_each; ++t)
        p.points.push_back({rng.uniform(0, 100), rng.uniform(0, 100), rng.below(2)});
      ds.patterns.push_back(p);
    }
  return ds;
}

}  // namespace

TEST_CASE("load_csv: two rows, one sample") {
  auto dir = temp_dir();
  write_file(dir / "points.csv", "sample_id,x,y,category\ns1,1.5,2.5,A\ns1,3,4,B\n");
  write_file(dir / "labels.csv", "sample_id,label\ns1,tumor\n");
  Dataset ds = load_csv((dir / "points.csv").string(), (dir / "labels.csv").string());
  REQUIRE(ds.patterns.size() == 1);
  REQUIRE(ds.patterns[0].points.size() == 2);
  REQUIRE(ds.vocabulary.size() == 2);
  REQUIRE(ds.vocabulary.name(0) == "A");  // sorted by name
  REQUIRE(ds.class_names == std::vector<std::string>{"tumor"});
}

TEST_CASE("load_csv: duplicated point rows are kept") {
  auto dir = temp_dir();
  write_file(dir / "points.csv",
             "sample_id,x,y,category\ns1,1,1,A\ns1,1,1,A\ns1,2,2,B\n");
  write_file(dir / "labels.csv", "sample_id,label\ns1,x\n");
  Dataset ds = load_csv((dir / "points.csv").string(), (dir / "labels.csv").string());
  REQUIRE(ds.patterns[0].points.size() == 3);
}

TEST_CASE("load_csv: parse errors carry line numbers") {
  auto dir = temp_dir();
  write_file(dir / "points.csv", "sample_id,x,y,category\ns1,1,oops,A\n");
  write_file(dir / "labels.csv", "sample_id,label\ns1,x\n");
  try {
    load_csv((dir / "points.csv").string(), (dir / "labels.csv").string());
    FAIL("expected parse error");
  } catch (const std::invalid_argument& e) {
    REQUIRE(std::string(e.what()).find(":2") != std::string::npos);
  }

  write_file(dir / "points.csv", "sample_id,x,y,category\ns_unlabeled,1,2,A\n");
  REQUIRE_THROWS_WITH(
      load_csv((dir / "points.csv").string(), (dir / "labels.csv").string()),
      Catch::Matchers::ContainsSubstring("no label"));

  write_file(dir / "points.csv", "sample_id,x,y,category\ns1,1,2\n");
  REQUIRE_THROWS_WITH(
      load_csv((dir / "points.csv").string(), (dir / "labels.csv").string()),
      Catch::Matchers::ContainsSubstring("malformed"));
}

TEST_CASE("csv round-trip: write(load(f)) == f modulo row order") {
  auto dir = temp_dir();
  const std::string points =
      "sample_id,x,y,category\ns1,1.25,2.5,A\ns1,3.5,4.125,B\ns2,0.5,0.75,A\n";
  const std::string labels = "sample_id,label\ns1,tumor\ns2,healthy\n";
  write_file(dir / "points.csv", points);
  write_file(dir / "labels.csv", labels);
  Dataset ds = load_csv((dir / "points.csv").string(), (dir / "labels.csv").string());
  write_csv(ds, (dir / "points2.csv").string(), (dir / "labels2.csv").string());

  auto lines = [](const std::string& s) {
    std::multiset<std::string> out;
    std::istringstream in(s);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) out.insert(line);
    return out;
  };
  REQUIRE(lines(read_file(dir / "points2.csv")) == lines(points));
  REQUIRE(lines(read_file(dir / "labels2.csv")) == lines(labels));
}

TEST_CASE("split: 100 samples 50/50 gives 72/8/20 stratified") {
  Dataset ds = make_balanced(50);
  Split s = split(ds, 42);
  REQUIRE(s.train.patterns.size() == 72);
  REQUIRE(s.val.patterns.size() == 8);
  REQUIRE(s.test.patterns.size() == 20);
  for (const Dataset* part : {&s.train, &s.val, &s.test}) {
    std::size_t pos = 0;
    for (const auto& p : part->patterns) pos += p.label;
    REQUIRE(pos * 2 == part->patterns.size());  // stratified
  }
}

TEST_CASE("split: deterministic, disjoint, and exhaustive") {
  Dataset ds = make_balanced(25);
  Split a = split(ds, 9);
  Split b = split(ds, 9);
  auto ids = [](const Dataset& d) {
    std::set<std::string> out;
    for (const auto& p : d.patterns) out.insert(p.sample_id);
    return out;
  };
  REQUIRE(ids(a.train) == ids(b.train));
  REQUIRE(ids(a.val) == ids(b.val));
  REQUIRE(ids(a.test) == ids(b.test));

  std::set<std::string> all = ids(a.train);
  for (const auto& id : ids(a.val)) REQUIRE(all.insert(id).second);
  for (const auto& id : ids(a.test)) REQUIRE(all.insert(id).second);
  REQUIRE(all == ids(ds));

  Split c = split(ds, 10);
  REQUIRE(ids(c.train) != ids(a.train));
}

TEST_CASE("split refuses classes below 10 samples") {
  Dataset ds = make_balanced(9);
  REQUIRE_THROWS_WITH(split(ds, 1), Catch::Matchers::ContainsSubstring("need >= 10"));
}

TEST_CASE("sample_points: 1024 of 2000 without replacement") {
  PointPattern p;
  p.sample_id = "s";
  Rng rng(3);
  for (int i = 0; i < 2000; ++i)
    p.points.push_back({rng.uniform(0, 1000), rng.uniform(0, 1000), 0});
  PointPattern s = sample_points(p, 1024, 5);
  REQUIRE(s.points.size() == 1024);
  std::set<std::pair<double, double>> distinct;
  for (const auto& pt : s.points) distinct.insert({pt.x, pt.y});
  REQUIRE(distinct.size() == 1024);
}

TEST_CASE("sample_points: exact-size pattern is identity up to order") {
  PointPattern p;
  p.sample_id = "s";
  for (int i = 0; i < 16; ++i) p.points.push_back({double(i), double(-i), 0});
  PointPattern s = sample_points(p, 16, 99);
  auto key = [](const PointPattern& q) {
    std::multiset<std::pair<double, double>> out;
    for (const auto& pt : q.points) out.insert({pt.x, pt.y});
    return out;
  };
  REQUIRE(key(s) == key(p));
}

TEST_CASE("sample_points: small pattern upsamples with replacement") {
  PointPattern p;
  p.sample_id = "s";
  p.points.push_back({1, 2, 0});
  p.points.push_back({3, 4, 1});
  PointPattern s = sample_points(p, 10, 7);
  REQUIRE(s.points.size() == 10);
}

TEST_CASE("sample_points: category frequencies within 5% over 100 trials") {
  PointPattern p;
  p.sample_id = "s";
  Rng rng(17);
  std::size_t count_a = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t cat = rng.next_double() < 0.3 ? 0 : 1;
    count_a += cat == 0 ? 1 : 0;
    p.points.push_back({rng.uniform(0, 1000), rng.uniform(0, 1000), cat});
  }
  const double source_frac = double(count_a) / 10000.0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    PointPattern s = sample_points(p, 1024, trial);
    std::size_t a = 0;
    for (const auto& pt : s.points) a += pt.category == 0 ? 1 : 0;
    REQUIRE(std::fabs(double(a) / 1024.0 - source_frac) < 0.05);
  }
}

TEST_CASE("rotate: full turn restores coordinates") {
  PointPattern p;
  p.sample_id = "s";
  Rng rng(5);
  for (int i = 0; i < 20; ++i) p.points.push_back({rng.uniform(0, 10), rng.uniform(0, 10), 0});
  PointPattern r = rotate(p, 360.0);
  for (std::size_t i = 0; i < p.points.size(); ++i) {
    REQUIRE(std::fabs(r.points[i].x - p.points[i].x) < 1e-9);
    REQUIRE(std::fabs(r.points[i].y - p.points[i].y) < 1e-9);
  }
}

TEST_CASE("rotate: pairwise distances preserved (isometry)") {
  PointPattern p;
  p.sample_id = "s";
  Rng rng(6);
  for (int i = 0; i < 30; ++i) p.points.push_back({rng.uniform(0, 50), rng.uniform(0, 50), 0});
  PointPattern r = rotate(p, 37.0);
  for (std::size_t i = 0; i < p.points.size(); ++i)
    for (std::size_t j = i + 1; j < p.points.size(); ++j) {
      const double d0 = std::hypot(p.points[i].x - p.points[j].x, p.points[i].y - p.points[j].y);
      const double d1 = std::hypot(r.points[i].x - r.points[j].x, r.points[i].y - r.points[j].y);
      REQUIRE(std::fabs(d0 - d1) < 1e-9);
    }
}

TEST_CASE("rotate: 90 degrees clockwise about the origin maps (1,0) to (0,-1)") {
  // centroid at the origin via a symmetric pair
  PointPattern p;
  p.sample_id = "s";
  p.points.push_back({1, 0, 0});
  p.points.push_back({-1, 0, 0});
  PointPattern r = rotate(p, 90.0);
  REQUIRE(r.points[0].x == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(r.points[0].y == Catch::Approx(-1.0).margin(1e-12));
  REQUIRE(r.points[1].x == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(r.points[1].y == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("augment: emits 6x with labels preserved and composed rotations") {
  Dataset ds = make_balanced(5, 8);
  Dataset aug = augment(ds);
  REQUIRE(aug.patterns.size() == 60);
  for (std::size_t i = 0; i < ds.patterns.size(); ++i) {
    for (std::size_t k = 0; k <= 5; ++k)
      REQUIRE(aug.patterns[i * 6 + k].label == ds.patterns[i].label);
    // copy at k*12 degrees equals composing rotate k times
    PointPattern composed = ds.patterns[i];
    for (std::size_t k = 1; k <= 5; ++k) {
      composed = rotate(composed, 12.0);
      const PointPattern& direct = aug.patterns[i * 6 + k];
      for (std::size_t t = 0; t < composed.points.size(); ++t) {
        REQUIRE(std::fabs(direct.points[t].x - composed.points[t].x) < 1e-9);
        REQUIRE(std::fabs(direct.points[t].y - composed.points[t].y) < 1e-9);
      }
    }
  }
}

TEST_CASE("generate_synthetic: deterministic and loadable") {
  SyntheticSpec spec;
  spec.num_categories = 3;
  spec.points_per_pattern = 64;
  spec.patterns_per_class = 12;
  spec.planted_relationships = {{{{0, 1}, 25.0, 0.8}}, {}};
  spec.background_intensity = 4e-4;
  spec.arena_extent = 600.0;
  spec.seed = 11;

  Dataset a = generate_synthetic(spec);
  Dataset b = generate_synthetic(spec);
  REQUIRE(a.patterns.size() == 24);
  for (std::size_t i = 0; i < a.patterns.size(); ++i) {
    REQUIRE(a.patterns[i].points.size() == 64);
    for (std::size_t t = 0; t < 64; ++t) {
      REQUIRE(a.patterns[i].points[t].x == b.patterns[i].points[t].x);
      REQUIRE(a.patterns[i].points[t].y == b.patterns[i].points[t].y);
    }
  }

  auto dir = temp_dir();
  write_csv(a, (dir / "p.csv").string(), (dir / "l.csv").string());
  Dataset back = load_csv((dir / "p.csv").string(), (dir / "l.csv").string());
  REQUIRE(back.patterns.size() == 24);
  const std::string first = read_file(dir / "p.csv");
  write_csv(b, (dir / "p.csv").string(), (dir / "l.csv").string());
  REQUIRE(read_file(dir / "p.csv") == first);  // bitwise-identical CSV
}

TEST_CASE("generate_synthetic: planted pair raises the participation index") {
  SyntheticSpec spec;
  spec.num_categories = 2;
  spec.points_per_pattern = 256;
  spec.patterns_per_class = 10;
  spec.planted_relationships = {{{{0, 1}, 30.0, 0.9}}, {}};
  spec.background_intensity = 2.5e-4;
  spec.arena_extent = 1000.0;
  spec.seed = 21;
  Dataset ds = generate_synthetic(spec);

  double planted_mean = 0.0, noise_mean = 0.0;
  for (const auto& p : ds.patterns) {
    const double pi = participation_index(p, {0, 1}, 30.0);
    (p.label == 0 ? planted_mean : noise_mean) += pi / 10.0;
  }
  REQUIRE(planted_mean > noise_mean);
}

TEST_CASE("generate_synthetic: refuses an arena too small for the intensity") {
  SyntheticSpec spec;
  spec.num_categories = 2;
  spec.points_per_pattern = 512;
  spec.patterns_per_class = 2;
  spec.planted_relationships = {{}, {}};
  spec.background_intensity = 1e-6;
  spec.arena_extent = 100.0;
  spec.seed = 1;
  REQUIRE_THROWS_WITH(generate_synthetic(spec),
                      Catch::Matchers::ContainsSubstring("arena too small"));
}
