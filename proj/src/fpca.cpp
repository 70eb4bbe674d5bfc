#include "persurv/fpca.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "persurv/error.hpp"
#include "persurv/format.hpp"

namespace persurv {

std::size_t FpcaModel::positive_components() const noexcept {
  std::size_t k = 0;
  while (k < components() && eigenvalues[static_cast<Eigen::Index>(k)] > 0.0) ++k;
  return k;
}

FpcaModel fit_fpca(const SurfaceGrid& grid, const Eigen::MatrixXd& samples) {
  const auto n = samples.rows();
  const auto m = samples.cols();
  if (n < 2) throw Error(ErrorCode::kFewerThanTwoSamples, "FPCA needs at least two surfaces");
  if (static_cast<std::size_t>(m) != grid.size()) {
    throw Error(ErrorCode::kGridMismatch, "sample length does not match grid size");
  }
  FpcaModel model;
  model.grid = grid;
  model.n_samples = static_cast<std::size_t>(n);
  model.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - model.mean.transpose();

  const Eigen::Index keep = std::min<Eigen::Index>(n - 1, m);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double s_max = sv.size() ? sv[0] : 0.0;
  const double rank_tol =
      s_max * static_cast<double>(std::max(n, m)) * std::numeric_limits<double>::epsilon();

  model.eigenvalues.resize(keep);
  model.eigenfunctions = svd.matrixV().leftCols(keep);
  for (Eigen::Index j = 0; j < keep; ++j) {
    const double s = sv[j];
    model.eigenvalues[j] = (s > rank_tol && s_max > 0.0) ? s * s / static_cast<double>(n - 1) : 0.0;
    auto col = model.eigenfunctions.col(j);
    Eigen::Index arg = 0;
    col.cwiseAbs().maxCoeff(&arg);
    if (col[arg] < 0.0) col = -col;
  }
  model.total_variance = model.eigenvalues.sum();
  model.training_scores.resize(n, keep);
  for (Eigen::Index i = 0; i < n; ++i) {
    model.training_scores.row(i) =
        project(model, Eigen::VectorXd(samples.row(i).transpose()), static_cast<std::size_t>(keep))
            .transpose();
  }
  return model;
}

FpcaModel fit_fpca(std::span<const PersistenceSurface> surfaces) {
  if (surfaces.size() < 2) {
    throw Error(ErrorCode::kFewerThanTwoSamples, "FPCA needs at least two surfaces");
  }
  const auto& grid = surfaces.front().grid;
  Eigen::MatrixXd samples(static_cast<Eigen::Index>(surfaces.size()),
                          static_cast<Eigen::Index>(grid.size()));
  for (std::size_t i = 0; i < surfaces.size(); ++i) {
    if (!(surfaces[i].grid == grid)) {
      throw Error(ErrorCode::kGridMismatch, "surfaces use different grids");
    }
    samples.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(surfaces[i].values.data(),
                                             static_cast<Eigen::Index>(grid.size()));
  }
  return fit_fpca(grid, samples);
}

Eigen::VectorXd project(const FpcaModel& model, const Eigen::VectorXd& values, std::size_t k) {
  if (k > model.components()) {
    throw Error(ErrorCode::kKTooLarge, "requested " + std::to_string(k) + " scores but model has " +
                                           std::to_string(model.components()));
  }
  if (values.size() != model.mean.size()) {
    throw Error(ErrorCode::kGridMismatch, "surface length does not match model grid");
  }
  const Eigen::RowVectorXd centered = (values - model.mean).transpose();
  return (centered * model.eigenfunctions.leftCols(static_cast<Eigen::Index>(k))).transpose();
}

Eigen::VectorXd project(const FpcaModel& model, const PersistenceSurface& surface, std::size_t k) {
  if (!(surface.grid == model.grid)) {
    throw Error(ErrorCode::kGridMismatch, "surface grid differs from model grid");
  }
  return project(model,
                 Eigen::Map<const Eigen::VectorXd>(surface.values.data(),
                                                   static_cast<Eigen::Index>(surface.values.size())),
                 k);
}

Eigen::VectorXd reconstruct(const FpcaModel& model, const Eigen::VectorXd& scores) {
  if (static_cast<std::size_t>(scores.size()) > model.components()) {
    throw Error(ErrorCode::kKTooLarge, "more scores than model components");
  }
  return model.mean + model.eigenfunctions.leftCols(scores.size()) * scores;
}

double percent_variance(const FpcaModel& model, std::size_t k) {
  if (k > model.components()) throw Error(ErrorCode::kKTooLarge, "k exceeds component count");
  const double total = model.total_variance;
  if (total <= 0.0) return 1.0;
  return model.eigenvalues.head(static_cast<Eigen::Index>(k)).sum() / total;
}

std::size_t select_by_pv(const FpcaModel& model, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "variance threshold must lie in (0, 1)");
  }
  const double total = model.total_variance;
  if (total <= 0.0) return 0;
  double acc = 0.0;
  for (std::size_t k = 0; k < model.components(); ++k) {
    acc += model.eigenvalues[static_cast<Eigen::Index>(k)];
    if (acc / total > threshold) return k + 1;
  }
  return model.components();
}

namespace {

void make_largest_entry_positive(Eigen::Ref<Eigen::VectorXd> col) {
  Eigen::Index arg = 0;
  col.cwiseAbs().maxCoeff(&arg);
  if (col[arg] < 0.0) col = -col;
}

// Leading eigenpairs of diag(lambda) - c a a^T restricted to the coordinates
// where a is non-negligible. Roots are located by bisection in a coordinate
// anchored at the nearer pole so that lambda_k - mu keeps full precision.
class SecularSolver {
 public:
  SecularSolver(std::vector<double> lambda, std::vector<double> a, double c)
      : lambda_(std::move(lambda)), a_(std::move(a)), c_(c) {
    for (double v : a_) asq_ += v * v;
  }

  std::size_t size() const noexcept { return lambda_.size(); }

  // Root j (0-based, descending) and its unnormalised eigenvector.
  std::pair<double, std::vector<double>> root(std::size_t j) const {
    const std::size_t p = lambda_.size();
    const bool lower_is_pole = j + 1 < p;
    const double lo = lower_is_pole ? lambda_[j + 1] : lambda_[p - 1] - c_ * asq_;
    const double hi = lambda_[j];
    const double mid = 0.5 * (lo + hi);
    const double origin = (lower_is_pole && g(mid, 0.0) >= 1.0) ? lo : hi;
    double dlo = lo - origin, dhi = hi - origin;
    for (int iter = 0; iter < 400; ++iter) {
      const double dm = 0.5 * (dlo + dhi);
      if (dm <= dlo || dm >= dhi) break;
      (g(origin, dm) > 1.0 ? dhi : dlo) = dm;
    }
    const double delta = 0.5 * (dlo + dhi);
    std::vector<double> w(p);
    for (std::size_t k = 0; k < p; ++k) w[k] = a_[k] / ((lambda_[k] - origin) - delta);
    return {origin + delta, std::move(w)};
  }

 private:
  // c * sum a_k^2 / (lambda_k - mu) with mu = origin + delta.
  double g(double origin, double delta) const {
    double s = 0.0;
    for (std::size_t k = 0; k < lambda_.size(); ++k) s += a_[k] * a_[k] / ((lambda_[k] - origin) - delta);
    return c_ * s;
  }

  std::vector<double> lambda_, a_;
  double c_;
  double asq_ = 0.0;
};

}  // namespace

GramFpca::GramFpca(const SurfaceGrid& grid, Eigen::MatrixXd samples)
    : grid_(grid), samples_(std::move(samples)) {
  if (static_cast<std::size_t>(samples_.cols()) != grid.size()) {
    throw Error(ErrorCode::kGridMismatch, "sample length does not match grid size");
  }
  gram_ = samples_ * samples_.transpose();
}

FpcaModel GramFpca::fit_rows(std::span<const std::size_t> rows, std::size_t components,
                             double pv_threshold) const {
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (n < 2) throw Error(ErrorCode::kFewerThanTwoSamples, "FPCA needs at least two surfaces");
  if (pv_threshold < 0.0 || pv_threshold >= 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "variance threshold must lie in [0, 1)");
  }
  const auto m = samples_.cols();
  Eigen::MatrixXd x(n, m);
  Eigen::MatrixXd block(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    const auto ra = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(a)]);
    if (ra >= samples_.rows()) throw Error(ErrorCode::kInvalidArgument, "row index out of range");
    x.row(a) = samples_.row(ra);
    for (Eigen::Index b = 0; b < n; ++b) block(a, b) = gram_(ra, static_cast<Eigen::Index>(rows[static_cast<std::size_t>(b)]));
  }
  const Eigen::VectorXd row_means = block.rowwise().mean();
  const double grand = row_means.mean();
  block.colwise() -= row_means;
  block.rowwise() -= row_means.transpose();
  block.array() += grand;

  FpcaModel model;
  model.grid = grid_;
  model.n_samples = static_cast<std::size_t>(n);
  model.mean = x.colwise().mean().transpose();
  const double divisor = static_cast<double>(n - 1);
  model.total_variance = std::max(0.0, block.trace()) / divisor;

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(block);
  const Eigen::VectorXd& ev = eig.eigenvalues();  // ascending
  const double top = std::max(0.0, ev[n - 1]);
  // Gram eigenvalues carry absolute error of order eps * top.
  const double zero_tol = top * static_cast<double>(std::max(n, m)) * 16.0 * std::numeric_limits<double>::epsilon();
  const auto max_components = std::min<Eigen::Index>(n - 1, m);
  Eigen::Index k = 0;
  double acc = 0.0;
  while (k < max_components) {
    const bool enough = static_cast<std::size_t>(k) >= components &&
                        (pv_threshold <= 0.0 || (model.total_variance > 0.0 && acc / model.total_variance > pv_threshold));
    if (enough || !(ev[n - 1 - k] > zero_tol)) break;
    acc += ev[n - 1 - k] / divisor;
    ++k;
  }
  model.eigenvalues.resize(k);
  model.eigenfunctions.resize(m, k);
  const Eigen::MatrixXd centered = x.rowwise() - model.mean.transpose();
  for (Eigen::Index j = 0; j < k; ++j) {
    model.eigenvalues[j] = ev[n - 1 - j] / divisor;
    Eigen::VectorXd phi = centered.transpose() * eig.eigenvectors().col(n - 1 - j);
    phi.normalize();
    make_largest_entry_positive(phi);
    model.eigenfunctions.col(j) = phi;
  }
  model.training_scores.resize(n, k);
  for (Eigen::Index a = 0; a < n; ++a) {
    model.training_scores.row(a) =
        project(model, Eigen::VectorXd(x.row(a).transpose()), static_cast<std::size_t>(k)).transpose();
  }
  return model;
}

FpcaModel GramFpca::without(std::size_t held_out, std::size_t components, double pv_threshold) const {
  if (held_out >= samples()) throw Error(ErrorCode::kInvalidArgument, "held-out index out of range");
  std::vector<std::size_t> rows;
  rows.reserve(samples() - 1);
  for (std::size_t i = 0; i < samples(); ++i) {
    if (i != held_out) rows.push_back(i);
  }
  return fit_rows(rows, components, pv_threshold);
}

LeaveOneOutFpca::LeaveOneOutFpca(const SurfaceGrid& grid, Eigen::MatrixXd samples)
    : grid_(grid), samples_(std::move(samples)) {
  const auto n = samples_.rows();
  const auto m = samples_.cols();
  if (n < 3) throw Error(ErrorCode::kFewerThanTwoSamples, "leave-one-out FPCA needs at least three surfaces");
  if (static_cast<std::size_t>(m) != grid.size()) {
    throw Error(ErrorCode::kGridMismatch, "sample length does not match grid size");
  }
  mean_ = samples_.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples_.rowwise() - mean_.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double s_max = sv.size() ? sv[0] : 0.0;
  const double tol = s_max * static_cast<double>(std::max(n, m)) * std::numeric_limits<double>::epsilon();
  Eigen::Index rank = 0;
  while (rank < sv.size() && sv[rank] > tol) ++rank;
  basis_ = svd.matrixV().leftCols(rank);
  scatter_ = sv.head(rank).array().square();
  coords_ = centered * basis_;
}

FpcaModel LeaveOneOutFpca::finish(std::size_t held_out, Eigen::VectorXd eigenvalues,
                                  Eigen::MatrixXd eigenfunctions, double total) const {
  const auto n = samples_.rows();
  const auto i = static_cast<Eigen::Index>(held_out);
  FpcaModel model;
  model.grid = grid_;
  model.n_samples = static_cast<std::size_t>(n - 1);
  model.mean = (static_cast<double>(n) * mean_ - samples_.row(i).transpose()) / static_cast<double>(n - 1);
  model.eigenvalues = std::move(eigenvalues);
  model.eigenfunctions = std::move(eigenfunctions);
  model.total_variance = total;
  const auto k = model.components();
  model.training_scores.resize(n - 1, static_cast<Eigen::Index>(k));
  for (Eigen::Index r = 0, out = 0; r < n; ++r) {
    if (r == i) continue;
    model.training_scores.row(out++) = project(model, Eigen::VectorXd(samples_.row(r).transpose()), k).transpose();
  }
  return model;
}

FpcaModel LeaveOneOutFpca::direct(std::size_t held_out, std::size_t components, double pv_threshold) const {
  const auto n = samples_.rows();
  const auto i = static_cast<Eigen::Index>(held_out);
  Eigen::MatrixXd fold(n - 1, samples_.cols());
  fold.topRows(i) = samples_.topRows(i);
  fold.bottomRows(n - 1 - i) = samples_.bottomRows(n - 1 - i);
  const auto full = fit_fpca(grid_, fold);
  std::size_t want = components;
  if (pv_threshold > 0.0) want = std::max(want, select_by_pv(full, pv_threshold));
  want = std::min(want, full.positive_components());
  const auto k = static_cast<Eigen::Index>(want);
  return finish(held_out, full.eigenvalues.head(k), full.eigenfunctions.leftCols(k), full.total_variance);
}

FpcaModel LeaveOneOutFpca::without(std::size_t held_out, std::size_t components, double pv_threshold,
                                   bool* refitted) const {
  const auto n = samples_.rows();
  if (held_out >= static_cast<std::size_t>(n)) throw Error(ErrorCode::kInvalidArgument, "held-out index out of range");
  if (pv_threshold < 0.0 || pv_threshold >= 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "variance threshold must lie in [0, 1)");
  }
  if (refitted) *refitted = false;
  const auto rank = scatter_.size();
  const auto i = static_cast<Eigen::Index>(held_out);
  const double c = static_cast<double>(n) / static_cast<double>(n - 1);
  const double divisor = static_cast<double>(n - 2);
  const Eigen::VectorXd a = coords_.row(i).transpose();
  const double top = rank ? scatter_[0] : 0.0;
  const double total_scatter = std::max(0.0, scatter_.sum() - c * a.squaredNorm());

  // Split coordinates into those moved by the downdate and those left alone.
  const double deflate_tol = 1e-12 * std::sqrt(top);
  std::vector<double> act_lambda, act_a;
  std::vector<Eigen::Index> act_index, fixed_index;
  for (Eigen::Index k = 0; k < rank; ++k) {
    if (std::abs(a[k]) > deflate_tol) {
      if (!act_lambda.empty() && act_lambda.back() - scatter_[k] <= 1e-12 * top) {
        if (refitted) *refitted = true;
        return direct(held_out, components, pv_threshold);
      }
      act_lambda.push_back(scatter_[k]);
      act_a.push_back(a[k]);
      act_index.push_back(k);
    } else {
      fixed_index.push_back(k);
    }
  }
  const SecularSolver solver(act_lambda, act_a, c);

  const auto max_components = static_cast<std::size_t>(std::min<Eigen::Index>(n - 2, samples_.cols()));
  const double rank_tol_factor =
      static_cast<double>(std::max<Eigen::Index>(n - 1, samples_.cols())) * std::numeric_limits<double>::epsilon();
  std::vector<double> values;
  std::vector<Eigen::VectorXd> vectors;
  std::size_t next_active = 0, next_fixed = 0;
  std::pair<double, std::vector<double>> pending;
  bool have_pending = false;
  double acc = 0.0;
  while (values.size() < max_components) {
    const bool enough = values.size() >= components &&
                        (pv_threshold <= 0.0 || (total_scatter > 0.0 && acc / total_scatter > pv_threshold));
    if (enough) break;
    if (next_active < solver.size() && !have_pending) {
      pending = solver.root(next_active);
      have_pending = true;
    }
    const double fixed_value =
        next_fixed < fixed_index.size() ? scatter_[fixed_index[next_fixed]] : -1.0;
    if (!have_pending && fixed_value < 0.0) break;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(rank);
    double mu;
    if (have_pending && pending.first >= fixed_value) {
      mu = pending.first;
      for (std::size_t k = 0; k < act_index.size(); ++k) w[act_index[k]] = pending.second[k];
      w.normalize();
      have_pending = false;
      ++next_active;
    } else {
      mu = fixed_value;
      w[fixed_index[next_fixed++]] = 1.0;
    }
    const double s_max = values.empty() ? std::sqrt(std::max(mu, 0.0)) : std::sqrt(values.front());
    if (!(mu > 0.0) || std::sqrt(mu) <= s_max * rank_tol_factor) break;
    values.push_back(mu);
    vectors.push_back(std::move(w));
    acc += mu;
  }

  // Accept only accurate, mutually orthogonal eigenvectors.
  const auto k = static_cast<Eigen::Index>(values.size());
  Eigen::MatrixXd w(rank, k);
  for (Eigen::Index j = 0; j < k; ++j) w.col(j) = vectors[static_cast<std::size_t>(j)];
  bool ok = true;
  if (k > 0) {
    const Eigen::MatrixXd gram = w.transpose() * w;
    ok = (gram - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() <= 1e-10;
    for (Eigen::Index j = 0; ok && j < k; ++j) {
      const Eigen::VectorXd col = w.col(j);
      const Eigen::VectorXd residual =
          scatter_.cwiseProduct(col) - c * a * a.dot(col) - values[static_cast<std::size_t>(j)] * col;
      ok = residual.norm() <= 1e-10 * top;
    }
  }
  if (!ok) {
    if (refitted) *refitted = true;
    return direct(held_out, components, pv_threshold);
  }

  Eigen::MatrixXd phi = basis_ * w;
  Eigen::VectorXd eigenvalues(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    make_largest_entry_positive(phi.col(j));
    eigenvalues[j] = values[static_cast<std::size_t>(j)] / divisor;
  }
  return finish(held_out, std::move(eigenvalues), std::move(phi), total_scatter / divisor);
}

void save_fpca(const FpcaModel& model, const std::filesystem::path& prefix) {
  auto json_path = prefix, csv_path = prefix;
  json_path += ".json";
  csv_path += ".csv";
  nlohmann::json j;
  j["n_samples"] = model.n_samples;
  j["grid"] = {{"x_range", {model.grid.x_lo(), model.grid.x_hi()}},
               {"y_range", {model.grid.y_lo(), model.grid.y_hi()}}};
  j["eigenvalues"] = std::vector<double>(model.eigenvalues.begin(), model.eigenvalues.end());
  j["total_variance"] = model.total_variance;
  j["data"] = csv_path.filename().string();
  std::ofstream(json_path, std::ios::binary) << j.dump(2) << "\n";

  std::ofstream csv(csv_path, std::ios::binary);
  csv << "mean";
  for (std::size_t k = 0; k < model.components(); ++k) csv << ",phi_" << (k + 1);
  csv << "\n";
  for (Eigen::Index r = 0; r < model.mean.size(); ++r) {
    csv << format_double(model.mean[r]);
    for (Eigen::Index c = 0; c < model.eigenfunctions.cols(); ++c) {
      csv << "," << format_double(model.eigenfunctions(r, c));
    }
    csv << "\n";
  }
}

FpcaModel load_fpca(const std::filesystem::path& prefix) {
  auto json_path = prefix, csv_path = prefix;
  json_path += ".json";
  csv_path += ".csv";
  std::ifstream jin(json_path);
  if (!jin) throw Error(ErrorCode::kMissingFile, "cannot open " + json_path.string());
  const auto j = nlohmann::json::parse(jin);
  FpcaModel model;
  const auto xr = j.at("grid").at("x_range"), yr = j.at("grid").at("y_range");
  model.grid = SurfaceGrid(xr[0].get<long>(), xr[1].get<long>(), yr[0].get<long>(), yr[1].get<long>());
  model.n_samples = j.at("n_samples").get<std::size_t>();
  const auto ev = j.at("eigenvalues").get<std::vector<double>>();
  model.eigenvalues = Eigen::Map<const Eigen::VectorXd>(ev.data(), static_cast<Eigen::Index>(ev.size()));
  model.total_variance = j.value("total_variance", model.eigenvalues.sum());

  std::ifstream cin(csv_path);
  if (!cin) throw Error(ErrorCode::kMissingFile, "cannot open " + csv_path.string());
  const auto m = static_cast<Eigen::Index>(model.grid.size());
  const auto k = static_cast<Eigen::Index>(ev.size());
  model.mean.resize(m);
  model.eigenfunctions.resize(m, k);
  std::string line;
  std::getline(cin, line);
  for (Eigen::Index r = 0; r < m; ++r) {
    if (!std::getline(cin, line)) throw Error(ErrorCode::kParseError, "FPCA CSV is truncated");
    std::istringstream row(line);
    std::string cell;
    Eigen::Index c = -1;
    while (std::getline(row, cell, ',')) {
      if (c >= k) throw Error(ErrorCode::kRaggedRows, "FPCA CSV has too many columns");
      (c < 0 ? model.mean[r] : model.eigenfunctions(r, c)) = parse_double_cell(cell);
      ++c;
    }
    if (c != k) throw Error(ErrorCode::kRaggedRows, "FPCA CSV has too few columns");
  }
  return model;
}

}  // namespace persurv
