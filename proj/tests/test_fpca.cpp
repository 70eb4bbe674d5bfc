#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "persurv/error.hpp"
#include "persurv/fpca.hpp"
#include "test_support.hpp"

using namespace persurv;

namespace {

Eigen::MatrixXd random_samples(SplitMix64& rng, Eigen::Index n, Eigen::Index m) {
  // Low-rank structure plus noise so eigenvalues have a spread.
  Eigen::MatrixXd basis(3, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (int r = 0; r < 3; ++r) basis(r, j) = rng.normal();
  }
  Eigen::MatrixXd x(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = 3 * rng.normal(), b = rng.normal(), c = 0.3 * rng.normal();
    for (Eigen::Index j = 0; j < m; ++j) {
      x(i, j) = 2.0 + a * basis(0, j) + b * basis(1, j) + c * basis(2, j) + 0.01 * rng.normal();
    }
  }
  return x;
}

FpcaModel with_eigenvalues(std::vector<double> ev) {
  FpcaModel m;
  m.eigenvalues = Eigen::Map<Eigen::VectorXd>(ev.data(), static_cast<Eigen::Index>(ev.size()));
  m.total_variance = m.eigenvalues.sum();
  return m;
}

std::vector<PersistenceSurface> surface_corpus(std::size_t n, double sigma) {
  SplitMix64 rng(RngSeed{2024});
  std::vector<PersistenceDiagram> ds;
  while (ds.size() < n) {
    auto d = filter_finite(compute_persistence(
        sedt3(persurv::testing::with_two_classes(persurv::testing::random_image(rng, 16)))));
    if (!d.pairs.empty()) ds.push_back(d.dimension(0));
  }
  auto g = shared_grid(ds, default_padding(sigma));
  std::vector<PersistenceSurface> out;
  for (const auto& d : ds) out.push_back(persistence_surface(d, g, sigma));
  return out;
}

}  // namespace

TEST(Fpca, IdenticalSamplesGiveZeroSpectrum) {
  SurfaceGrid g(0, 3, 0, 3);
  Eigen::MatrixXd x(4, static_cast<Eigen::Index>(g.size()));
  for (Eigen::Index i = 0; i < 4; ++i) x.row(i) = Eigen::RowVectorXd::LinSpaced(x.cols(), 0.5, 3.0);
  auto m = fit_fpca(g, x);
  EXPECT_EQ(m.positive_components(), 0u);
  for (double v : m.eigenvalues) EXPECT_EQ(v, 0.0);
  EXPECT_LE(m.training_scores.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(percent_variance(m, 0), 1.0);
}

TEST(Fpca, TwoSampleClosedForm) {
  SurfaceGrid g(0, 4, 0, 4);
  const auto size = static_cast<Eigen::Index>(g.size());
  Eigen::VectorXd x1(size), x2(size);
  for (Eigen::Index j = 0; j < size; ++j) {
    x1[j] = std::sin(0.7 * static_cast<double>(j)) + 1.0;
    x2[j] = std::cos(0.3 * static_cast<double>(j)) * 0.5;
  }
  Eigen::MatrixXd x(2, size);
  x.row(0) = x1.transpose();
  x.row(1) = x2.transpose();
  auto m = fit_fpca(g, x);

  ASSERT_EQ(m.components(), 1u);
  const Eigen::VectorXd diff = x1 - x2;
  const double norm = diff.norm();
  EXPECT_NEAR(m.eigenvalues[0], norm * norm / 2.0, 1e-12);

  // Eigenfunction is +-(x1 - x2)/|x1 - x2| with its largest entry positive.
  Eigen::VectorXd expected = diff / norm;
  Eigen::Index arg = 0;
  expected.cwiseAbs().maxCoeff(&arg);
  if (expected[arg] < 0) expected = -expected;
  EXPECT_LE((m.eigenfunctions.col(0) - expected).cwiseAbs().maxCoeff(), 1e-12);

  const double sign = expected.dot(diff) > 0 ? 1.0 : -1.0;
  EXPECT_NEAR(project(m, x1, 1)[0], sign * norm / 2.0, 1e-12);
  EXPECT_NEAR(project(m, x2, 1)[0], -sign * norm / 2.0, 1e-12);
}

TEST(Fpca, ComponentCountAndSignConvention) {
  SplitMix64 rng(RngSeed{1});
  for (auto [n, mcols] : {std::pair{5, 12}, std::pair{12, 6}, std::pair{2, 3}}) {
    const auto x = random_samples(rng, n, mcols);
    SurfaceGrid g(0, 1, 0, mcols);  // one column, mcols rows, all above the diagonal
    ASSERT_EQ(g.size(), static_cast<std::size_t>(mcols));
    auto m = fit_fpca(g, x);
    EXPECT_EQ(m.components(), static_cast<std::size_t>(std::min(n - 1, mcols)));
    EXPECT_LE(m.positive_components(), static_cast<std::size_t>(std::min(n - 1, mcols)));
    for (std::size_t j = 0; j < m.components(); ++j) {
      auto col = m.eigenfunctions.col(static_cast<Eigen::Index>(j));
      Eigen::Index arg = 0;
      col.cwiseAbs().maxCoeff(&arg);
      EXPECT_GT(col[arg], 0.0);
      if (j > 0) EXPECT_LE(m.eigenvalues[j], m.eigenvalues[j - 1]);
      EXPECT_GE(m.eigenvalues[j], 0.0);
    }
  }
}

TEST(Fpca, SpectralInvariants) {
  SplitMix64 rng(RngSeed{7});
  for (int trial = 0; trial < 20; ++trial) {
    const auto n = static_cast<Eigen::Index>(3 + rng.below(12));
    const auto mcols = static_cast<Eigen::Index>(2 + rng.below(30));
    const auto x = random_samples(rng, n, mcols);
    SurfaceGrid g(0, 1, 0, mcols);
    auto m = fit_fpca(g, x);
    const auto k = static_cast<Eigen::Index>(m.components());

    // Orthonormality.
    const Eigen::MatrixXd gram = m.eigenfunctions.transpose() * m.eigenfunctions;
    EXPECT_LE((gram - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff(), 1e-10);

    // Covariance rebuilt from the eigenpairs equals the empirical one.
    const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
    const Eigen::MatrixXd rebuilt =
        m.eigenfunctions * m.eigenvalues.asDiagonal() * m.eigenfunctions.transpose();
    EXPECT_LE((cov - rebuilt).norm(), 1e-8 * std::max(1.0, cov.norm()));

    // Scores: mean 0, variance lambda, equal to project().
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto s = m.training_scores.col(j);
      EXPECT_NEAR(s.mean(), 0.0, 1e-8);
      EXPECT_NEAR(s.squaredNorm() / static_cast<double>(n - 1), m.eigenvalues[j],
                  1e-8 * std::max(1.0, m.eigenvalues[j]));
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::VectorXd row = x.row(i).transpose();
      const auto p = project(m, row, m.components());
      EXPECT_EQ(p.transpose(), m.training_scores.row(i));
      // Full reconstruction.
      EXPECT_LE((reconstruct(m, p) - row).cwiseAbs().maxCoeff(), 1e-8);
    }
    EXPECT_LE(project(m, m.mean, m.components()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Fpca, RealSurfaces) {
  auto surfaces = surface_corpus(25, 0.5);
  auto m = fit_fpca(surfaces);
  EXPECT_EQ(m.n_samples, 25u);
  const auto k = m.positive_components();
  EXPECT_GT(k, 0u);
  for (const auto& s : surfaces) {
    const auto p = project(m, s, k);
    const auto rec = reconstruct(m, p);
    for (std::size_t j = 0; j < s.values.size(); ++j) EXPECT_NEAR(rec[static_cast<Eigen::Index>(j)], s.values[j], 1e-8);
  }
}

TEST(Fpca, Errors) {
  SurfaceGrid g(0, 2, 0, 2);
  try {
    fit_fpca(g, Eigen::MatrixXd::Ones(1, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFewerThanTwoSamples);
  }
  try {
    fit_fpca(g, Eigen::MatrixXd::Ones(3, 4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kGridMismatch);
  }
  SurfaceGrid other(0, 3, 0, 3);
  std::vector<PersistenceSurface> mixed{{g, {1, 2, 3}}, {other, std::vector<double>(other.size(), 1.0)}};
  EXPECT_THROW(fit_fpca(mixed), Error);

  Eigen::MatrixXd x(3, 3);
  x << 1, 2, 3, 2, 2, 1, 0, 1, 5;
  auto m = fit_fpca(g, x);
  try {
    project(m, PersistenceSurface{g, {1, 2, 3}}, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kKTooLarge);
  }
  try {
    project(m, PersistenceSurface{other, std::vector<double>(other.size(), 1.0)}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kGridMismatch);
  }
}

TEST(PercentVariance, Examples) {
  auto m = with_eigenvalues({3, 1});
  EXPECT_DOUBLE_EQ(percent_variance(m, 1), 0.75);
  EXPECT_DOUBLE_EQ(percent_variance(m, 2), 1.0);
  EXPECT_EQ(select_by_pv(m, 0.9), 2u);
  EXPECT_EQ(select_by_pv(m, 0.7), 1u);
  auto zero = with_eigenvalues({0, 0, 0});
  for (std::size_t k = 0; k <= 3; ++k) EXPECT_EQ(percent_variance(zero, k), 1.0);
  EXPECT_THROW(select_by_pv(m, 1.0), Error);
  EXPECT_THROW(select_by_pv(m, 0.0), Error);
}

TEST(PercentVariance, MonotoneAndSelectionMinimal) {
  auto surfaces = surface_corpus(20, 1.0);
  auto m = fit_fpca(surfaces);
  double prev = 0.0;
  for (std::size_t k = 0; k <= m.components(); ++k) {
    const double pv = percent_variance(m, k);
    EXPECT_GE(pv, prev - 1e-15);
    prev = pv;
  }
  for (double c : {0.5, 0.8, 0.9, 0.99}) {
    const auto k = select_by_pv(m, c);
    EXPECT_GT(percent_variance(m, k), c);
    if (k > 0) EXPECT_LE(percent_variance(m, k - 1), c);
  }
}

TEST(Fpca, SaveLoadRoundTrip) {
  auto surfaces = surface_corpus(8, 0.7);
  auto m = fit_fpca(surfaces);
  const auto dir = std::filesystem::temp_directory_path() / "persurv_fpca_test";
  std::filesystem::create_directories(dir);
  save_fpca(m, dir / "model");
  auto back = load_fpca(dir / "model");
  EXPECT_TRUE(back.grid == m.grid);
  EXPECT_EQ(back.n_samples, m.n_samples);
  EXPECT_EQ(back.eigenvalues, m.eigenvalues);
  EXPECT_EQ(back.total_variance, m.total_variance);
  EXPECT_EQ(back.mean, m.mean);
  EXPECT_EQ(back.eigenfunctions, m.eigenfunctions);
  EXPECT_EQ(project(back, surfaces[3], m.components()), project(m, surfaces[3], m.components()));
  std::filesystem::remove_all(dir);
}

namespace {

Eigen::MatrixXd drop_row(const Eigen::MatrixXd& x, Eigen::Index i) {
  Eigen::MatrixXd out(x.rows() - 1, x.cols());
  out.topRows(i) = x.topRows(i);
  out.bottomRows(x.rows() - 1 - i) = x.bottomRows(x.rows() - 1 - i);
  return out;
}

void expect_same_leading(const FpcaModel& fast, const FpcaModel& ref, std::size_t k) {
  ASSERT_GE(fast.components(), k);
  ASSERT_GE(ref.components(), k);
  EXPECT_EQ(fast.n_samples, ref.n_samples);
  EXPECT_LE((fast.mean - ref.mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(fast.total_variance, ref.total_variance, 1e-9 * std::max(1.0, ref.total_variance));
  const auto kk = static_cast<Eigen::Index>(k);
  for (Eigen::Index j = 0; j < kk; ++j) {
    EXPECT_NEAR(fast.eigenvalues[j], ref.eigenvalues[j], 1e-9 * std::max(1.0, ref.eigenvalues[0]));
  }
  EXPECT_LE((fast.eigenfunctions.leftCols(kk) - ref.eigenfunctions.leftCols(kk)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE((fast.training_scores.leftCols(kk) - ref.training_scores.leftCols(kk)).cwiseAbs().maxCoeff(),
            1e-7 * std::max(1.0, ref.training_scores.cwiseAbs().maxCoeff()));
}

}  // namespace

TEST(LeaveOneOutFpca, MatchesDirectFit) {
  SplitMix64 rng(RngSeed{31});
  for (int trial = 0; trial < 10; ++trial) {
    const auto n = static_cast<Eigen::Index>(4 + rng.below(20));
    const auto mcols = static_cast<Eigen::Index>(3 + rng.below(40));
    const auto x = random_samples(rng, n, mcols);
    SurfaceGrid g(0, 1, 0, mcols);
    LeaveOneOutFpca loo(g, x);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto ref = fit_fpca(g, drop_row(x, i));
      const auto k = std::min<std::size_t>(3, ref.positive_components());
      const auto fast = loo.without(static_cast<std::size_t>(i), k);
      expect_same_leading(fast, ref, k);
    }
  }
}

TEST(LeaveOneOutFpca, RealSurfacesMostlyAvoidRefits) {
  auto surfaces = surface_corpus(40, 0.5);
  const auto& g = surfaces.front().grid;
  Eigen::MatrixXd x(40, static_cast<Eigen::Index>(g.size()));
  for (Eigen::Index i = 0; i < 40; ++i) {
    x.row(i) = Eigen::Map<const Eigen::RowVectorXd>(surfaces[static_cast<std::size_t>(i)].values.data(), x.cols());
  }
  LeaveOneOutFpca loo(g, x);
  int refits = 0;
  for (Eigen::Index i = 0; i < 40; ++i) {
    bool refitted = false;
    const auto fast = loo.without(static_cast<std::size_t>(i), 4, 0.0, &refitted);
    refits += refitted;
    const auto ref = fit_fpca(g, drop_row(x, i));
    // Leading eigenvalues of surface data can be close; compare only the
    // well-separated ones.
    std::size_t k = 0;
    while (k < 4 && k + 1 < ref.components() &&
           ref.eigenvalues[static_cast<Eigen::Index>(k)] - ref.eigenvalues[static_cast<Eigen::Index>(k + 1)] >
               1e-3 * ref.eigenvalues[0]) {
      ++k;
    }
    expect_same_leading(fast, ref, k);
  }
  EXPECT_LE(refits, 4);
}

TEST(LeaveOneOutFpca, PvThresholdAndRank) {
  SplitMix64 rng(RngSeed{5});
  const auto x = random_samples(rng, 15, 20);
  SurfaceGrid g(0, 1, 0, 20);
  LeaveOneOutFpca loo(g, x);
  for (double c : {0.5, 0.9, 0.999999}) {
    const auto fast = loo.without(3, 0, c);
    const auto ref = fit_fpca(g, drop_row(x, 3));
    EXPECT_EQ(fast.components(), select_by_pv(ref, c));
    EXPECT_EQ(select_by_pv(fast, c), select_by_pv(ref, c));
  }
  // Asking for more than the rank stops at the positive components.
  const auto all = loo.without(0, 100);
  EXPECT_EQ(all.components(), fit_fpca(g, drop_row(x, 0)).positive_components());

  EXPECT_THROW(LeaveOneOutFpca(g, x.topRows(2)), Error);
  EXPECT_THROW(loo.without(15, 1), Error);
}

TEST(GramFpca, MatchesDirectFitOnSubsets) {
  SplitMix64 rng(RngSeed{77});
  for (int trial = 0; trial < 10; ++trial) {
    const auto n = static_cast<Eigen::Index>(4 + rng.below(20));
    const auto mcols = static_cast<Eigen::Index>(3 + rng.below(40));
    const auto x = random_samples(rng, n, mcols);
    SurfaceGrid g(0, 1, 0, mcols);
    GramFpca gram(g, x);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto ref = fit_fpca(g, drop_row(x, i));
      const auto k = std::min<std::size_t>(3, ref.positive_components());
      expect_same_leading(gram.without(static_cast<std::size_t>(i), k), ref, k);
    }
    const std::vector<std::size_t> rows{0, 2, static_cast<std::size_t>(n - 1)};
    Eigen::MatrixXd sub(3, mcols);
    for (int a = 0; a < 3; ++a) sub.row(a) = x.row(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(a)]));
    const auto ref = fit_fpca(g, sub);
    expect_same_leading(gram.fit_rows(rows, 2), ref, std::min<std::size_t>(2, ref.positive_components()));
  }
}

TEST(GramFpca, IgnoresRowsOutsideTheSubset) {
  SplitMix64 rng(RngSeed{3});
  auto x = random_samples(rng, 10, 12);
  SurfaceGrid g(0, 1, 0, 12);
  const auto before = GramFpca(g, x).without(4, 3);
  x.row(4) *= 50.0;
  x(4, 0) = -7.0;
  const auto after = GramFpca(g, x).without(4, 3);
  EXPECT_EQ(before.eigenvalues, after.eigenvalues);
  EXPECT_EQ(before.eigenfunctions, after.eigenfunctions);
  EXPECT_EQ(before.mean, after.mean);
  EXPECT_EQ(before.total_variance, after.total_variance);
}

TEST(GramFpca, PvThresholdAndDegenerateData) {
  SplitMix64 rng(RngSeed{9});
  const auto x = random_samples(rng, 15, 20);
  SurfaceGrid g(0, 1, 0, 20);
  GramFpca gram(g, x);
  for (double c : {0.5, 0.9, 0.999}) {
    const auto ref = fit_fpca(g, drop_row(x, 2));
    EXPECT_EQ(gram.without(2, 0, c).components(), select_by_pv(ref, c));
  }
  Eigen::MatrixXd same(4, 20);
  for (Eigen::Index i = 0; i < 4; ++i) same.row(i) = x.row(0);
  const auto flat = GramFpca(g, same).without(1, 3);
  EXPECT_EQ(flat.components(), 0u);
  EXPECT_EQ(flat.total_variance, 0.0);
  EXPECT_THROW(GramFpca(g, same).fit_rows(std::vector<std::size_t>{1}, 1), Error);
}
