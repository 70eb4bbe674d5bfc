#pragma once

#include <filesystem>
#include <span>

#include <Eigen/Dense>

#include "persurv/psurf.hpp"

namespace persurv {

// Discretised Karhunen-Loeve decomposition of surfaces on one grid. The grid
// spacing is 1, so the L2 inner product is the plain dot product.
struct FpcaModel {
  SurfaceGrid grid;
  Eigen::VectorXd mean;            // grid.size()
  Eigen::VectorXd eigenvalues;     // non-increasing, >= 0, covariance divisor n - 1
  Eigen::MatrixXd eigenfunctions;  // grid.size() x components, orthonormal columns
  // Sum of all eigenvalues, including any not stored (truncated models).
  double total_variance = 0.0;
  std::size_t n_samples = 0;
  // Scores of the training samples (n_samples x components), computed by the
  // same projection as project().
  Eigen::MatrixXd training_scores;

  std::size_t components() const noexcept { return static_cast<std::size_t>(eigenvalues.size()); }
  std::size_t positive_components() const noexcept;
};

// Rows of `samples` are surfaces on `grid`. Keeps min(n - 1, grid size)
// components; eigenvalues below numerical rank are set to exactly 0. Each
// eigenfunction is signed so that its largest-magnitude entry is positive.
FpcaModel fit_fpca(const SurfaceGrid& grid, const Eigen::MatrixXd& samples);
FpcaModel fit_fpca(std::span<const PersistenceSurface> surfaces);

// Scores of the first k components.
Eigen::VectorXd project(const FpcaModel& model, const PersistenceSurface& surface, std::size_t k);
Eigen::VectorXd project(const FpcaModel& model, const Eigen::VectorXd& values, std::size_t k);

// mean + sum_j scores[j] * phi_j over the first scores.size() components.
Eigen::VectorXd reconstruct(const FpcaModel& model, const Eigen::VectorXd& scores);

// Fraction of total_variance carried by the first k components; 1 when the
// total is 0.
double percent_variance(const FpcaModel& model, std::size_t k);

// Smallest k with percent_variance(k) > threshold (0 < threshold < 1). A
// truncated model that cannot reach the threshold returns components().
std::size_t select_by_pv(const FpcaModel& model, double threshold);

// FPCA of row subsets of a fixed sample matrix. The Gram matrix of all rows
// is formed once; a subset fit eigen-decomposes the doubly centred Gram block
// of its own rows, so it depends only on the selected surfaces. Only the
// leading components are kept: at least `components`, more if needed to
// exceed pv_threshold (when > 0), never past the numerical rank.
class GramFpca {
 public:
  GramFpca(const SurfaceGrid& grid, Eigen::MatrixXd samples);

  FpcaModel fit_rows(std::span<const std::size_t> rows, std::size_t components,
                     double pv_threshold = 0.0) const;
  // Every row except `held_out`.
  FpcaModel without(std::size_t held_out, std::size_t components, double pv_threshold = 0.0) const;

  std::size_t samples() const noexcept { return static_cast<std::size_t>(samples_.rows()); }

 private:
  SurfaceGrid grid_;
  Eigen::MatrixXd samples_;
  Eigen::MatrixXd gram_;
};

// Leave-one-out FPCA. Removing sample i changes the scatter matrix by the
// rank-one term n/(n-1) (x_i - mean)(x_i - mean)^T, so each fold's leading
// eigenpairs follow from the full-data decomposition through a secular
// equation. Folds whose eigenpairs fail a residual/orthogonality check are
// refitted directly. Results agree with fit_fpca on the reduced sample.
class LeaveOneOutFpca {
 public:
  LeaveOneOutFpca(const SurfaceGrid& grid, Eigen::MatrixXd samples);

  // Model of every sample except `held_out` holding the leading components:
  // at least `components` of them, and with pv_threshold > 0 enough to exceed
  // that variance fraction. Stops early at the fold's numerical rank.
  // total_variance is always the full fold total. `refitted` reports whether
  // the direct fit was used.
  FpcaModel without(std::size_t held_out, std::size_t components, double pv_threshold = 0.0,
                    bool* refitted = nullptr) const;

  std::size_t samples() const noexcept { return static_cast<std::size_t>(samples_.rows()); }
  const SurfaceGrid& grid() const noexcept { return grid_; }

 private:
  FpcaModel direct(std::size_t held_out, std::size_t components, double pv_threshold) const;
  FpcaModel finish(std::size_t held_out, Eigen::VectorXd eigenvalues, Eigen::MatrixXd eigenfunctions,
                   double total) const;

  SurfaceGrid grid_;
  Eigen::MatrixXd samples_;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd basis_;    // grid x rank, right singular vectors
  Eigen::VectorXd scatter_;  // squared singular values, descending
  Eigen::MatrixXd coords_;   // n x rank, centred samples in the basis
};

// <prefix>.json (grid, eigenvalues, n_samples) + <prefix>.csv (columns
// mean, phi_1..phi_K; one row per grid point in grid order).
void save_fpca(const FpcaModel& model, const std::filesystem::path& prefix);
FpcaModel load_fpca(const std::filesystem::path& prefix);

}  // namespace persurv
