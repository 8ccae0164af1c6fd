#include "gpvio/factor_graph.hpp"

#include "gpvio/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

namespace gpvio {

namespace {

std::atomic<std::uint64_t> g_value_version{0};

// ---------------------------------------------------------------------------
// Variable layout for one solve: dense variables first, then landmarks that
// are eliminated per iteration.
// ---------------------------------------------------------------------------

struct Slot {
  bool landmark = false;
  int index = 0;  ///< dense offset or landmark index
  int dim = 0;
};

struct Layout {
  std::vector<Key> dense_keys;
  std::vector<int> dense_offsets;
  int dense_dim = 0;
  std::vector<Key> landmarks;
  std::vector<std::vector<Slot>> slots;  ///< per factor, per key
  int state_dim = 0;
};

Layout make_layout(std::span<const FactorPtr> factors) {
  std::set<Key> all;
  std::set<Key> coupled;  // landmarks sharing a factor with another landmark
  for (const FactorPtr& f : factors) {
    int n_landmarks = 0;
    for (const Key& k : f->keys()) {
      all.insert(k);
      if (k.kind == VarKind::kLandmark) ++n_landmarks;
    }
    if (n_landmarks > 1)
      for (const Key& k : f->keys())
        if (k.kind == VarKind::kLandmark) coupled.insert(k);
  }

  Layout layout;
  std::map<Key, Slot> slot_of;
  for (const Key& k : all) {
    const int d = tangent_dim(k.kind);
    layout.state_dim += d;
    if (k.kind == VarKind::kLandmark && coupled.count(k) == 0) {
      slot_of[k] = Slot{true, static_cast<int>(layout.landmarks.size()), d};
      layout.landmarks.push_back(k);
    } else {
      slot_of[k] = Slot{false, layout.dense_dim, d};
      layout.dense_keys.push_back(k);
      layout.dense_offsets.push_back(layout.dense_dim);
      layout.dense_dim += d;
    }
  }
  layout.slots.reserve(factors.size());
  for (const FactorPtr& f : factors) {
    std::vector<Slot> s;
    s.reserve(f->keys().size());
    for (const Key& k : f->keys()) s.push_back(slot_of.at(k));
    layout.slots.push_back(std::move(s));
  }
  return layout;
}

using Matrix3X = Eigen::Matrix<double, Eigen::Dynamic, 3>;

struct LandmarkBlock {
  Matrix3 H = Matrix3::Zero();
  Vector3 g = Vector3::Zero();
  /// Coupling blocks (dense offset, d x 3), sorted by offset after assembly.
  std::vector<std::pair<int, Matrix3X>> C;

  Matrix3X& coupling(int offset, int dim) {
    for (auto& [o, M] : C)
      if (o == offset) return M;
    C.emplace_back(offset, Matrix3X::Zero(dim, 3));
    return C.back().second;
  }
};

/// Normal equations H dx = -g with the landmark blocks kept separate.
struct BlockSystem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  std::vector<LandmarkBlock> landmarks;
  double cost = 0.0;
};

std::vector<FactorLinearization> linearize_all(std::span<const FactorPtr> factors,
                                               const Values& values) {
  std::vector<FactorLinearization> lin(factors.size());
  for (std::size_t i = 0; i < factors.size(); ++i) factors[i]->linearize(values, lin[i], true);
  return lin;
}

/// Adds one factor: a single product of the stacked Jacobian, scattered into blocks.
void assemble_factor(const std::vector<Slot>& slots, const FactorLinearization& L, BlockSystem& sys) {
  std::vector<int> col(slots.size());
  int total = 0;
  for (std::size_t a = 0; a < slots.size(); ++a) {
    col[a] = total;
    total += slots[a].dim;
  }
  Eigen::MatrixXd J(L.residual.size(), total);
  for (std::size_t a = 0; a < slots.size(); ++a) J.middleCols(col[a], slots[a].dim) = L.jacobians[a];
  Eigen::MatrixXd JtJ = Eigen::MatrixXd::Zero(total, total);
  JtJ.selfadjointView<Eigen::Lower>().rankUpdate(J.transpose());
  JtJ.triangularView<Eigen::StrictlyUpper>() = JtJ.transpose();
  const Eigen::VectorXd Jtr = J.transpose() * L.residual;

  for (std::size_t a = 0; a < slots.size(); ++a) {
    const Slot& sa = slots[a];
    if (sa.landmark) {
      LandmarkBlock& lb = sys.landmarks[static_cast<std::size_t>(sa.index)];
      lb.g += Jtr.segment<3>(col[a]);
      lb.H += JtJ.block<3, 3>(col[a], col[a]);
      continue;
    }
    sys.g.segment(sa.index, sa.dim) += Jtr.segment(col[a], sa.dim);
    for (std::size_t b = 0; b < slots.size(); ++b) {
      const Slot& sb = slots[b];
      if (sb.landmark) {
        sys.landmarks[static_cast<std::size_t>(sb.index)].coupling(sa.index, sa.dim) +=
            JtJ.block(col[a], col[b], sa.dim, 3);
      } else if (sb.index >= sa.index) {
        sys.H.block(sa.index, sb.index, sa.dim, sb.dim) += JtJ.block(col[a], col[b], sa.dim, sb.dim);
      }
    }
  }
}

BlockSystem assemble(const Layout& layout, std::span<const FactorLinearization> lin) {
  BlockSystem sys;
  sys.H = Eigen::MatrixXd::Zero(layout.dense_dim, layout.dense_dim);
  sys.g = Eigen::VectorXd::Zero(layout.dense_dim);
  sys.landmarks.resize(layout.landmarks.size());
  for (std::size_t f = 0; f < lin.size(); ++f) {
    if (!lin[f].active) continue;
    sys.cost += lin[f].cost;
    assemble_factor(layout.slots[f], lin[f], sys);
  }
  for (LandmarkBlock& lb : sys.landmarks)
    std::sort(lb.C.begin(), lb.C.end(),
              [](const auto& x, const auto& y) { return x.first < y.first; });
  sys.H.triangularView<Eigen::StrictlyLower>() = sys.H.transpose();
  return sys;
}

Matrix3 invert_landmark_block(const Matrix3& H) {
  Eigen::LLT<Matrix3> llt(H);
  if (llt.info() == Eigen::Success) return llt.solve(Matrix3::Identity());
  Eigen::SelfAdjointEigenSolver<Matrix3> es(H);
  Vector3 inv = Vector3::Zero();
  for (int i = 0; i < 3; ++i)
    if (es.eigenvalues()[i] > kMarginalEigenFloor) inv[i] = 1.0 / es.eigenvalues()[i];
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

double damping_of(double diag, double lambda) {
  return lambda * std::max(diag, 1e-9);
}

/// Solves the damped system; returns false when the reduced matrix is not PD.
bool solve_step(const Layout& layout, const BlockSystem& sys, double lambda,
                Eigen::VectorXd& dense_step, std::vector<Vector3>& landmark_steps) {
  Eigen::MatrixXd S = sys.H;
  Eigen::VectorXd g = sys.g;
  if (lambda > 0.0)
    for (Eigen::Index i = 0; i < S.rows(); ++i) S(i, i) += damping_of(sys.H(i, i), lambda);

  std::vector<Matrix3> Hinv(sys.landmarks.size());
  for (std::size_t l = 0; l < sys.landmarks.size(); ++l) {
    const LandmarkBlock& lb = sys.landmarks[l];
    Matrix3 H = lb.H;
    if (lambda > 0.0)
      for (int i = 0; i < 3; ++i) H(i, i) += damping_of(lb.H(i, i), lambda);
    Hinv[l] = invert_landmark_block(H);
    std::vector<Eigen::Index> row(lb.C.size());
    Eigen::Index n = 0;
    for (std::size_t a = 0; a < lb.C.size(); ++a) {
      row[a] = n;
      n += lb.C[a].second.rows();
    }
    Matrix3X stacked(n, 3);
    for (std::size_t a = 0; a < lb.C.size(); ++a)
      stacked.middleRows(row[a], lb.C[a].second.rows()) = lb.C[a].second;
    const Matrix3X scaled = stacked * Hinv[l];
    const Eigen::MatrixXd outer = scaled * stacked.transpose();
    const Eigen::VectorXd gl = scaled * lb.g;
    for (std::size_t a = 0; a < lb.C.size(); ++a) {
      const auto& [oa, Ca] = lb.C[a];
      g.segment(oa, Ca.rows()) -= gl.segment(row[a], Ca.rows());
      for (std::size_t b = a; b < lb.C.size(); ++b) {
        const auto& [ob, Cb] = lb.C[b];
        S.block(oa, ob, Ca.rows(), Cb.rows()) -= outer.block(row[a], row[b], Ca.rows(), Cb.rows());
      }
    }
  }
  S.triangularView<Eigen::StrictlyLower>() = S.transpose();

  dense_step.resize(layout.dense_dim);
  if (layout.dense_dim > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success) {
      if (lambda > 0.0) return false;
      // Undamped steps on a semidefinite system fall back to a pivoting factorization.
      Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
      if (ldlt.info() != Eigen::Success) return false;
      dense_step = ldlt.solve(-g);
    } else {
      dense_step = llt.solve(-g);
    }
    if (!dense_step.allFinite()) return false;
  }

  landmark_steps.resize(sys.landmarks.size());
  for (std::size_t l = 0; l < sys.landmarks.size(); ++l) {
    const LandmarkBlock& lb = sys.landmarks[l];
    Vector3 rhs = lb.g;
    for (const auto& [oa, Ca] : lb.C) rhs += Ca.transpose() * dense_step.segment(oa, Ca.rows());
    landmark_steps[l] = -(Hinv[l] * rhs);
  }
  return true;
}

void apply_step(const Layout& layout, const Eigen::VectorXd& dense_step,
                const std::vector<Vector3>& landmark_steps, Values& values) {
  for (std::size_t i = 0; i < layout.dense_keys.size(); ++i) {
    const Key& k = layout.dense_keys[i];
    values.retract(k, dense_step.segment(layout.dense_offsets[i], tangent_dim(k.kind)));
  }
  for (std::size_t l = 0; l < layout.landmarks.size(); ++l)
    values.retract(layout.landmarks[l], landmark_steps[l]);
}

/// Eliminates the leading `n` variables of (H, g) with an eigenvalue-floored pseudo-inverse.
void eliminate_leading(Eigen::MatrixXd& H, Eigen::VectorXd& g, Eigen::Index n, bool& floored) {
  if (n == 0) return;
  const Eigen::Index m = H.rows() - n;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H.topLeftCorner(n, n));
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ev = es.eigenvalues()[i];
    if (ev > kMarginalEigenFloor) {
      inv[i] = 1.0 / ev;
    } else {
      floored = true;
    }
  }
  const Eigen::MatrixXd Hinv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  const Eigen::MatrixXd Hba = H.bottomLeftCorner(m, n);
  const Eigen::MatrixXd K = Hba * Hinv;
  Eigen::MatrixXd Hr = H.bottomRightCorner(m, m) - K * Hba.transpose();
  Eigen::VectorXd gr = g.tail(m) - K * g.head(n);
  H = 0.5 * (Hr + Hr.transpose());
  g = gr;
}

}  // namespace

// ---------------------------------------------------------------------------
// Keys and values
// ---------------------------------------------------------------------------

int tangent_dim(VarKind kind) {
  switch (kind) {
    case VarKind::kPose: return 6;
    case VarKind::kTwist: return 6;
    case VarKind::kVelocity: return 3;
    case VarKind::kBias: return 6;
    case VarKind::kLandmark: return 3;
  }
  return 0;
}

std::string to_string(const Key& key) {
  const char* tag = "?";
  switch (key.kind) {
    case VarKind::kPose: tag = "T"; break;
    case VarKind::kTwist: tag = "w"; break;
    case VarKind::kVelocity: tag = "v"; break;
    case VarKind::kBias: tag = "b"; break;
    case VarKind::kLandmark: tag = "l"; break;
  }
  return std::string(tag) + std::to_string(key.index);
}

void Values::touch() { version_ = ++g_value_version; }

const Values::Entry& Values::entry(const Key& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw std::out_of_range("Values: missing " + to_string(key));
  return it->second;
}

Values::Entry& Values::entry(const Key& key) {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw std::out_of_range("Values: missing " + to_string(key));
  return it->second;
}

void Values::insert(const Key& key, const Pose3& pose) {
  if (key.kind != VarKind::kPose) throw std::invalid_argument("Values: pose inserted under non-pose key");
  entries_[key] = Entry{pose, {}};
  touch();
}

void Values::insert(const Key& key, const Eigen::VectorXd& vec) {
  if (key.kind == VarKind::kPose || vec.size() != tangent_dim(key.kind))
    throw std::invalid_argument("Values: vector size does not match " + to_string(key));
  entries_[key] = Entry{Pose3(), vec};
  touch();
}

void Values::erase(const Key& key) {
  entries_.erase(key);
  touch();
}

const Pose3& Values::pose(const Key& key) const { return entry(key).pose; }
const Eigen::VectorXd& Values::vector(const Key& key) const { return entry(key).vec; }

void Values::set(const Key& key, const Pose3& pose) {
  entry(key).pose = pose;
  touch();
}

void Values::set(const Key& key, const Eigen::VectorXd& vec) {
  Entry& e = entry(key);
  if (vec.size() != e.vec.size()) throw std::invalid_argument("Values: size mismatch");
  e.vec = vec;
  touch();
}

void Values::retract(const Key& key, const Eigen::Ref<const Eigen::VectorXd>& delta) {
  Entry& e = entry(key);
  if (key.kind == VarKind::kPose) {
    e.pose = e.pose * se3_exp<double>(Vector6(delta));
  } else {
    e.vec += delta;
  }
  touch();
}

Eigen::VectorXd Values::local(const Key& key, const Values& origin) const {
  if (key.kind == VarKind::kPose) return se3_log<double>(origin.pose(key).inverse() * pose(key));
  return vector(key) - origin.vector(key);
}

std::vector<Key> Values::keys() const {
  std::vector<Key> out;
  out.reserve(entries_.size());
  for (const auto& [k, e] : entries_) out.push_back(k);
  return out;
}

// ---------------------------------------------------------------------------
// Factors
// ---------------------------------------------------------------------------

double Factor::cost(const Values& values) const {
  FactorLinearization lin;
  linearize(values, lin, false);
  return lin.active ? lin.cost : 0.0;
}

Eigen::MatrixXd sqrt_information(const Eigen::MatrixXd& covariance) {
  Eigen::LLT<Eigen::MatrixXd> llt(covariance);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("sqrt_information: covariance is not positive definite");
  const Eigen::Index n = covariance.rows();
  return llt.matrixL().solve(Eigen::MatrixXd::Identity(n, n));
}

LinearPriorFactor::LinearPriorFactor(std::vector<Key> keys, Values linearization_point,
                                     Eigen::MatrixXd jacobian, Eigen::VectorXd offset,
                                     std::string label)
    : Factor(std::move(keys)),
      lin_(std::move(linearization_point)),
      jacobian_(std::move(jacobian)),
      offset_(std::move(offset)),
      label_(std::move(label)) {
  int dim = 0;
  for (const Key& k : this->keys()) {
    offsets_.push_back(dim);
    dim += tangent_dim(k.kind);
    if (!lin_.contains(k)) throw std::invalid_argument("LinearPriorFactor: missing " + to_string(k));
  }
  if (jacobian_.cols() != dim || jacobian_.rows() != offset_.size())
    throw std::invalid_argument("LinearPriorFactor: inconsistent dimensions");
}

void LinearPriorFactor::linearize(const Values& values, FactorLinearization& out,
                                  bool with_jacobians) const {
  const std::vector<Key>& ks = keys();
  Eigen::VectorXd dx(jacobian_.cols());
  for (std::size_t i = 0; i < ks.size(); ++i)
    dx.segment(offsets_[i], tangent_dim(ks[i].kind)) = values.local(ks[i], lin_);
  out.active = true;
  out.residual = jacobian_ * dx + offset_;
  out.cost = 0.5 * out.residual.squaredNorm();
  if (!with_jacobians) return;
  out.jacobians.resize(ks.size());
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const int d = tangent_dim(ks[i].kind);
    const auto block = jacobian_.middleCols(offsets_[i], d);
    if (ks[i].kind == VarKind::kPose) {
      out.jacobians[i] =
          block * se3_right_jacobian_inv<double>(Vector6(dx.segment<6>(offsets_[i])));
    } else {
      out.jacobians[i] = block;
    }
  }
}

Eigen::MatrixXd LinearPriorFactor::information() const {
  return jacobian_.transpose() * jacobian_;
}

std::shared_ptr<LinearPriorFactor> make_prior(const Key& key, const Values& mean,
                                              const Eigen::MatrixXd& covariance) {
  if (covariance.rows() != tangent_dim(key.kind))
    throw std::invalid_argument("make_prior: covariance size does not match " + to_string(key));
  Values lin;
  if (key.kind == VarKind::kPose) {
    lin.insert(key, mean.pose(key));
  } else {
    lin.insert(key, mean.vector(key));
  }
  return std::make_shared<LinearPriorFactor>(
      std::vector<Key>{key}, std::move(lin), sqrt_information(covariance),
      Eigen::VectorXd::Zero(covariance.rows()), "prior");
}

double total_cost(std::span<const FactorPtr> factors, const Values& values) {
  double c = 0.0;
  for (const FactorPtr& f : factors) c += f->cost(values);
  return c;
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

void SolverConfig::validate() const {
  if (max_iterations < 1) throw ConfigError("solver max_iterations must be >= 1");
  if (!(relative_tolerance > 0.0)) throw ConfigError("solver relative_tolerance must be positive");
  if (!(initial_lambda > 0.0) || !(max_lambda > initial_lambda))
    throw ConfigError("solver damping range is invalid");
}

SolveReport solve(std::span<const FactorPtr> factors, Values& values, const SolverConfig& cfg) {
  cfg.validate();
  const Layout layout = make_layout(factors);
  SolveReport report;
  report.state_dim = layout.state_dim;
  report.reduced_dim = layout.dense_dim;
  report.eliminated_landmarks = static_cast<int>(layout.landmarks.size());

  double cost = total_cost(factors, values);
  report.initial_cost = cost;
  report.final_cost = cost;
  double lambda = cfg.initial_lambda;
  Eigen::VectorXd dense_step;
  std::vector<Vector3> landmark_steps;

  for (int it = 0; it < cfg.max_iterations; ++it) {
    if (cost < 1e-18) {
      report.converged = true;
      break;
    }
    const std::vector<FactorLinearization> lin = linearize_all(factors, values);
    const BlockSystem sys = assemble(layout, lin);
    report.iterations = it + 1;

    bool accepted = false;
    double new_cost = cost;
    while (lambda <= cfg.max_lambda) {
      if (solve_step(layout, sys, lambda, dense_step, landmark_steps)) {
        Values trial = values;
        apply_step(layout, dense_step, landmark_steps, trial);
        new_cost = total_cost(factors, trial);
        if (std::isfinite(new_cost) && new_cost < cost) {
          values = std::move(trial);
          accepted = true;
          lambda = std::max(lambda * 0.1, 1e-12);
          break;
        }
      }
      lambda *= 10.0;
    }
    if (!accepted) {
      // No damping level decreases the cost: either converged to numerical
      // precision or genuinely stuck.
      report.stalled = true;
      break;
    }
    const double rel = (cost - new_cost) / cost;
    cost = new_cost;
    report.final_cost = cost;
    if (rel < cfg.relative_tolerance) {
      report.converged = true;
      break;
    }
  }
  // Whitened residuals around 1e-9 sigma are numerical zero, not a stuck solve.
  if (report.stalled && report.final_cost < 1e-18) {
    report.stalled = false;
    report.converged = true;
  }
  return report;
}

std::map<Key, Eigen::VectorXd> gauss_newton_step(std::span<const FactorPtr> factors,
                                                 const Values& values) {
  const Layout layout = make_layout(factors);
  const std::vector<FactorLinearization> lin = linearize_all(factors, values);
  const BlockSystem sys = assemble(layout, lin);
  Eigen::VectorXd dense_step;
  std::vector<Vector3> landmark_steps;
  if (!solve_step(layout, sys, 0.0, dense_step, landmark_steps))
    throw std::runtime_error("gauss_newton_step: normal equations are singular");
  std::map<Key, Eigen::VectorXd> out;
  for (std::size_t i = 0; i < layout.dense_keys.size(); ++i) {
    const Key& k = layout.dense_keys[i];
    out[k] = dense_step.segment(layout.dense_offsets[i], tangent_dim(k.kind));
  }
  for (std::size_t l = 0; l < layout.landmarks.size(); ++l) out[layout.landmarks[l]] = landmark_steps[l];
  return out;
}

DenseSystem linearize_dense(std::span<const FactorPtr> factors, const Values& values,
                            std::vector<Key> ordering) {
  DenseSystem sys;
  sys.ordering = std::move(ordering);
  std::map<Key, int> offset_of;
  int dim = 0;
  for (const Key& k : sys.ordering) {
    sys.offsets.push_back(dim);
    offset_of[k] = dim;
    dim += tangent_dim(k.kind);
  }
  sys.hessian = Eigen::MatrixXd::Zero(dim, dim);
  sys.gradient = Eigen::VectorXd::Zero(dim);
  FactorLinearization lin;
  for (const FactorPtr& f : factors) {
    f->linearize(values, lin, true);
    if (!lin.active) continue;
    sys.cost += lin.cost;
    const std::vector<Key>& ks = f->keys();
    for (std::size_t a = 0; a < ks.size(); ++a) {
      const int oa = offset_of.at(ks[a]);
      const Eigen::MatrixXd& Ja = lin.jacobians[a];
      sys.gradient.segment(oa, Ja.cols()) += Ja.transpose() * lin.residual;
      for (std::size_t b = 0; b < ks.size(); ++b) {
        const int ob = offset_of.at(ks[b]);
        const Eigen::MatrixXd& Jb = lin.jacobians[b];
        sys.hessian.block(oa, ob, Ja.cols(), Jb.cols()) += Ja.transpose() * Jb;
      }
    }
  }
  return sys;
}

// ---------------------------------------------------------------------------
// Marginalization
// ---------------------------------------------------------------------------

MarginalizationResult marginalize(std::span<const FactorPtr> factors, const Values& values,
                                  const std::set<Key>& marginalized) {
  MarginalizationResult result;
  std::vector<FactorPtr> connected;
  std::set<Key> touched;
  for (const FactorPtr& f : factors) {
    const bool hit = std::any_of(f->keys().begin(), f->keys().end(),
                                 [&](const Key& k) { return marginalized.count(k) != 0; });
    if (hit) {
      connected.push_back(f);
      touched.insert(f->keys().begin(), f->keys().end());
    } else {
      result.remaining.push_back(f);
    }
  }
  if (connected.empty()) return result;

  // Ordering: marginalized landmarks, other marginalized variables, retained variables.
  std::vector<Key> m_landmarks;
  std::vector<Key> m_other;
  std::vector<Key> kept;
  for (const Key& k : touched) {
    if (marginalized.count(k) == 0) {
      kept.push_back(k);
    } else if (k.kind == VarKind::kLandmark) {
      m_landmarks.push_back(k);
    } else {
      m_other.push_back(k);
    }
  }
  std::vector<Key> ordering = m_landmarks;
  ordering.insert(ordering.end(), m_other.begin(), m_other.end());
  ordering.insert(ordering.end(), kept.begin(), kept.end());
  DenseSystem sys = linearize_dense(connected, values, ordering);

  Eigen::Index n_landmarks = 0;
  for (const Key& k : m_landmarks) n_landmarks += tangent_dim(k.kind);
  Eigen::Index n_other = 0;
  for (const Key& k : m_other) n_other += tangent_dim(k.kind);

  Eigen::MatrixXd H = sys.hessian;
  Eigen::VectorXd g = sys.gradient;
  eliminate_leading(H, g, n_landmarks, result.floored);
  eliminate_leading(H, g, n_other, result.floored);
  if (kept.empty()) return result;

  // Residual form: H = U S U^T -> A = sqrt(S) U^T, b = S^-1/2 U^T g.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
  const double top = std::max(es.eigenvalues().maxCoeff(), 0.0);
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
    if (es.eigenvalues()[i] > kMarginalEigenFloor * std::max(top, 1.0)) rows.push_back(i);
  Eigen::MatrixXd A(static_cast<Eigen::Index>(rows.size()), H.cols());
  Eigen::VectorXd b(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double s = es.eigenvalues()[rows[r]];
    const auto u = es.eigenvectors().col(rows[r]);
    A.row(static_cast<Eigen::Index>(r)) = std::sqrt(s) * u.transpose();
    b[static_cast<Eigen::Index>(r)] = u.dot(g) / std::sqrt(s);
  }

  Values lin;
  for (const Key& k : kept) {
    if (k.kind == VarKind::kPose) {
      lin.insert(k, values.pose(k));
    } else {
      lin.insert(k, values.vector(k));
    }
  }
  result.prior = std::make_shared<LinearPriorFactor>(kept, std::move(lin), std::move(A),
                                                     std::move(b), "marginal_prior");
  return result;
}

}  // namespace gpvio
