#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <queue>

#include "oracles/naive_persistence.hpp"
#include "persurv/cubical.hpp"
#include "persurv/error.hpp"
#include "test_support.hpp"

namespace persurv {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using Counts = std::map<std::pair<int, double>, int>;

Counts cell_histogram(const CubicalFiltration& f) {
  Counts c;
  for (const auto& cell : f.cells) ++c[{cell.dim, cell.value}];
  return c;
}

DistanceField field(std::size_t w, std::size_t h, std::vector<double> v) {
  return DistanceField(w, h, std::move(v));
}

TEST(BuildFiltration, SinglePixel) {
  const auto f = build_filtration(field(1, 1, {-1}));
  EXPECT_EQ(cell_histogram(f), (Counts{{{0, -1.0}, 4}, {{1, -1.0}, 4}, {{2, -1.0}, 1}}));
}

TEST(BuildFiltration, SharedFacesTakeMinimum) {
  const auto f = build_filtration(field(2, 1, {-1, 2}));
  // Left pixel: 4 vertices, 4 edges incl. the shared one, all at -1.
  EXPECT_EQ(cell_histogram(f), (Counts{{{0, -1.0}, 4},
                                       {{0, 2.0}, 2},
                                       {{1, -1.0}, 4},
                                       {{1, 2.0}, 3},
                                       {{2, -1.0}, 1},
                                       {{2, 2.0}, 1}}));
}

TEST(BuildFiltration, InfinitePixelsExcluded) {
  EXPECT_EQ(cell_histogram(build_filtration(field(2, 1, {-1, kInf}))),
            cell_histogram(build_filtration(field(1, 1, {-1}))));
}

TEST(BuildFiltration, AllInfiniteRejected) {
  try {
    build_filtration(field(2, 2, {kInf, kInf, kInf, kInf}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAllInfiniteField);
  }
}

TEST(BuildFiltration, MonotoneAndOrdered) {
  SplitMix64 rng(RngSeed{1});
  for (int trial = 0; trial < 100; ++trial) {
    const auto f = build_filtration(testing::random_field(rng, 9));
    for (std::size_t k = 0; k < f.cells.size(); ++k) {
      const auto& c = f.cells[k];
      EXPECT_EQ(c.face_count, c.dim == 0 ? 0 : c.dim == 1 ? 2 : 4);
      for (int i = 0; i < c.face_count; ++i) {
        EXPECT_LT(c.faces[i], k);
        EXPECT_LE(f.cells[c.faces[i]].value, c.value);
        EXPECT_EQ(f.cells[c.faces[i]].dim + 1, c.dim);
      }
      if (k > 0) EXPECT_LE(f.cells[k - 1].value, c.value);
    }
  }
}

PersistenceDiagram dgm(std::vector<PersistencePair> pairs) { return PersistenceDiagram{std::move(pairs)}.sorted(); }

TEST(ComputePersistence, RowField) {
  const auto d = compute_persistence(field(4, 1, {-2, -1, 1, 2})).sorted();
  EXPECT_EQ(d.pairs, dgm({{0, -2, kInf}}).pairs);
}

DistanceField ring_field() {
  std::vector<double> v(25, 1.0);
  for (std::size_t y = 1; y <= 3; ++y) {
    for (std::size_t x = 1; x <= 3; ++x) {
      if (!(x == 2 && y == 2)) v[y * 5 + x] = -1.0;
    }
  }
  return field(5, 5, v);
}

TEST(ComputePersistence, RingHasOneLoop) {
  const auto d = compute_persistence(ring_field());
  EXPECT_EQ(d.dimension(1).sorted().pairs, dgm({{1, -1, 1}}).pairs);
  EXPECT_EQ(d.dimension(0).sorted().pairs, dgm({{0, -1, kInf}}).pairs);
}

TEST(ComputePersistence, TwoBlobsMergeInSea) {
  std::vector<double> v(25, 3.0);
  v[0] = -1.0;
  v[24] = -1.0;
  const auto d = compute_persistence(field(5, 5, v));
  EXPECT_EQ(d.dimension(0).sorted().pairs, dgm({{0, -1, 3}, {0, -1, kInf}}).pairs);
  EXPECT_TRUE(d.dimension(1).empty());
}

TEST(ComputePersistence, DiagonalPixelsConnectThroughVertex) {
  // T-construction: pixels touching at a corner share a vertex.
  const auto d = compute_persistence(field(2, 2, {-1, 5, 5, -1}));
  EXPECT_EQ(d.dimension(0).sorted().pairs, dgm({{0, -1, kInf}}).pairs);
}

TEST(ComputePersistence, MatchesNaiveReduction) {
  SplitMix64 rng(RngSeed{31337});
  for (int trial = 0; trial < 120; ++trial) {
    const auto f = testing::random_field(rng, 8);
    const auto fast = compute_persistence(f).sorted();
    ASSERT_EQ(fast.pairs, oracle::naive_persistence(f).pairs) << "trial " << trial;
    for (const auto& p : fast.pairs) EXPECT_GT(p.death, p.birth);
  }
}

TEST(ComputePersistence, TieBreakInvariance) {
  SplitMix64 rng(RngSeed{4});
  for (int trial = 0; trial < 40; ++trial) {
    const auto f = testing::random_field(rng, 6);
    EXPECT_EQ(oracle::naive_persistence(f, 1 + rng.below(1000)).pairs,
              oracle::naive_persistence(f).pairs);
  }
}

TEST(ComputePersistence, InvariantUnderDihedralTransforms) {
  SplitMix64 rng(RngSeed{17});
  for (int trial = 0; trial < 30; ++trial) {
    const auto img = testing::with_two_classes(testing::random_image(rng, 14));
    const auto base = compute_persistence(sedt3(img)).sorted();
    for (GridTransform g : kAllTransforms) {
      EXPECT_EQ(compute_persistence(sedt3(transform(img, g))).sorted().pairs, base.pairs);
    }
  }
}

std::size_t eight_components(const DistanceField& f) {
  const std::size_t w = f.width(), h = f.height();
  std::vector<bool> seen(w * h, false);
  std::size_t count = 0;
  for (std::size_t s = 0; s < w * h; ++s) {
    if (seen[s] || !std::isfinite(f.values()[s])) continue;
    ++count;
    std::queue<std::size_t> q;
    q.push(s);
    seen[s] = true;
    while (!q.empty()) {
      const std::size_t c = q.front();
      q.pop();
      const long cx = static_cast<long>(c % w), cy = static_cast<long>(c / w);
      for (long dy = -1; dy <= 1; ++dy) {
        for (long dx = -1; dx <= 1; ++dx) {
          const long nx = cx + dx, ny = cy + dy;
          if (nx < 0 || ny < 0 || nx >= static_cast<long>(w) || ny >= static_cast<long>(h)) continue;
          const std::size_t n = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
          if (!seen[n] && std::isfinite(f.values()[n])) {
            seen[n] = true;
            q.push(n);
          }
        }
      }
    }
  }
  return count;
}

TEST(ComputePersistence, EssentialComponentsMatchEightConnectivity) {
  SplitMix64 rng(RngSeed{71});
  for (int trial = 0; trial < 100; ++trial) {
    const auto f = testing::random_field(rng, 12, 0.4);
    const auto d = compute_persistence(f);
    std::size_t essential = 0;
    for (const auto& p : d.pairs) essential += (p.dim == 0 && std::isinf(p.death)) ? 1 : 0;
    EXPECT_EQ(essential, eight_components(f));
  }
}

TEST(BettiNumbers, FilledDiskIsContractible) {
  LabelImage img(15, 15, Label::kNormal);
  for (std::size_t y = 0; y < 15; ++y) {
    for (std::size_t x = 0; x < 15; ++x) {
      if ((x - 7.0) * (x - 7.0) + (y - 7.0) * (y - 7.0) <= 16.0) img.at(x, y) = Label::kTumor;
    }
  }
  const auto f = build_filtration(sedt3(img));
  EXPECT_EQ(betti_numbers(f, 100.0), (BettiNumbers{1, 0}));
  EXPECT_EQ(betti_numbers(f, -1.0), (BettiNumbers{1, 0}));
}

TEST(BettiNumbers, RingHasOneHole) {
  const auto f = build_filtration(ring_field());
  EXPECT_EQ(betti_numbers(f, -1.0), (BettiNumbers{1, 1}));
  EXPECT_EQ(betti_numbers(f, 0.5), (BettiNumbers{1, 1}));
  EXPECT_EQ(betti_numbers(f, 1.0), (BettiNumbers{1, 0}));
}

TEST(BettiNumbers, EmptySublevel) {
  EXPECT_EQ(betti_numbers(build_filtration(ring_field()), -5.0), (BettiNumbers{0, 0}));
}

TEST(BettiNumbers, EulerCharacteristicConsistency) {
  SplitMix64 rng(RngSeed{6});
  for (int trial = 0; trial < 60; ++trial) {
    const auto f = build_filtration(testing::random_field(rng, 9));
    const auto d = compute_persistence(f);
    for (double t = -5.0; t <= 5.0; t += 0.5) {
      long chi = 0;
      for (const auto& c : f.cells) {
        if (c.value <= t) chi += c.dim == 1 ? -1 : 1;
      }
      const auto b = betti_numbers(d, t);
      EXPECT_EQ(static_cast<long>(b.b0) - static_cast<long>(b.b1), chi) << "t=" << t;
    }
  }
}

TEST(FilterFinite, DropsEssentialPairs) {
  EXPECT_TRUE(filter_finite(dgm({{0, -2, kInf}})).empty());
  EXPECT_TRUE(filter_finite(PersistenceDiagram{}).empty());
  EXPECT_EQ(filter_finite(dgm({{1, -1, 1}, {1, -1, kInf}})).pairs, dgm({{1, -1, 1}}).pairs);
}

TEST(RescaleDiagram, LinearScaling) {
  const auto d = dgm({{1, -4, 2}, {0, -3, kInf}});
  EXPECT_EQ(rescale_diagram(d, 1.0).pairs, d.pairs);
  EXPECT_EQ(rescale_diagram(dgm({{1, -4, 2}}), 0.5).pairs, dgm({{1, -2, 1}}).pairs);
  EXPECT_EQ(rescale_diagram(d, 0.5).pairs[0].death, kInf);
  SplitMix64 rng(RngSeed{2});
  for (int i = 0; i < 100; ++i) {
    const double b = rng.uniform(-50, 50), dd = b + rng.uniform(0.01, 10), factor = rng.uniform(1e-3, 10);
    const auto r = rescale_diagram(dgm({{0, b, dd}}), factor);
    EXPECT_GT(r.pairs[0].death, r.pairs[0].birth);
  }
}

TEST(RescaleDiagram, RejectsNonPositiveFactor) {
  for (double f : {0.0, -1.0}) {
    try {
      rescale_diagram(PersistenceDiagram{}, f);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kNonPositiveFactor);
    }
  }
}

TEST(DiagramCsv, SortedWithInfinity) {
  const auto d = PersistenceDiagram{{{1, -1, 1}, {0, -2, kInf}, {0, -3, 0.5}}};
  const auto text = format_diagram_csv(d);
  EXPECT_EQ(text, "dim,birth,death\n0,-3,0.5\n0,-2,inf\n1,-1,1\n");
  EXPECT_EQ(parse_diagram_csv(text).pairs, d.sorted().pairs);
}

}  // namespace
}  // namespace persurv
