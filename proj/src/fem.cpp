#include "topoforge/fem.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "topoforge/errors.hpp"

namespace topoforge::fem {

std::array<int, 8> GridShape::element_dofs(int ely, int elx) const {
  const int tl = node(ely, elx);
  const int tr = node(ely, elx + 1);
  const int bl = tl + 1;
  const int br = tr + 1;
  return {2 * bl, 2 * bl + 1, 2 * br, 2 * br + 1, 2 * tr, 2 * tr + 1, 2 * tl, 2 * tl + 1};
}

void GridShape::validate() const {
  if (nelx < 1 || nely < 1) {
    std::ostringstream msg;
    msg << "grid shape must be at least 1x1, got nelx=" << nelx << " nely=" << nely;
    throw ParameterError(msg.str());
  }
}

double MaterialModel::young(double density) const {
  return emin + std::pow(density, penal) * (e0 - emin);
}

void MaterialModel::validate() const {
  if (!(emin > 0.0) || !(emin < e0)) throw ParameterError("material: need 0 < emin < e0");
  if (!(nu > 0.0) || !(nu < 0.5)) throw ParameterError("material: need 0 < nu < 0.5");
  if (!(penal >= 1.0)) throw ParameterError("material: need penal >= 1");
}

ElementMatrix element_stiffness(double nu) {
  if (!(nu > 0.0) || !(nu < 0.5)) {
    throw ParameterError("element_stiffness: Poisson ratio must lie in (0, 0.5)");
  }
  // Closed form of the exactly integrated bilinear element.
  Eigen::Matrix4d a11, a12, b11, b12;
  a11 << 12, 3, -6, -3, 3, 12, 3, 0, -6, 3, 12, -3, -3, 0, -3, 12;
  a12 << -6, -3, 0, 3, -3, -6, -3, -6, 0, -3, -6, 3, 3, -6, 3, -6;
  b11 << -4, 3, -2, 9, 3, -4, -9, 4, -2, -9, -4, -3, 9, 4, -3, -4;
  b12 << 2, -3, 4, -9, -3, 2, 9, -2, 4, 9, 2, 3, -9, -2, 3, 2;

  ElementMatrix a, b;
  a << a11, a12, a12.transpose(), a11;
  b << b11, b12, b12.transpose(), b11;
  ElementMatrix k = (a + nu * b) / (24.0 * (1.0 - nu * nu));
  // Analytically symmetric; make it bitwise symmetric too.
  return 0.5 * (k + k.transpose());
}

std::vector<int> left_edge_dofs(const GridShape& shape) {
  std::vector<int> dofs;
  dofs.reserve(2 * (shape.nely + 1));
  for (int ely = 0; ely <= shape.nely; ++ely) {
    dofs.push_back(2 * shape.node(ely, 0));
    dofs.push_back(2 * shape.node(ely, 0) + 1);
  }
  return dofs;
}

namespace {

void check_density(const GridShape& shape, const Field& density) {
  if (density.rows() != shape.nely || density.cols() != shape.nelx) {
    std::ostringstream msg;
    msg << "density field is " << density.rows() << "x" << density.cols() << ", grid expects "
        << shape.nely << "x" << shape.nelx;
    throw ParameterError(msg.str());
  }
  if (!((density >= 0.0) && (density <= 1.0)).all()) {
    throw ParameterError("density entries must lie in [0, 1]");
  }
}

void check_vector(const GridShape& shape, const Vector& v, const char* what) {
  if (v.size() != shape.dof_count()) {
    std::ostringstream msg;
    msg << what << " has length " << v.size() << ", grid has " << shape.dof_count() << " DOFs";
    throw ParameterError(msg.str());
  }
}

}  // namespace

struct StiffnessSolver::Impl {
  using SpMat = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

  std::vector<int> reduced;       // full DOF -> reduced index, -1 when fixed
  std::vector<int> free_dofs;     // reduced index -> full DOF
  std::vector<int> value_slot;    // per element, per (i, j): slot in K values, -1 to skip
  SpMat k;
  Eigen::SimplicialLLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> llt;
};

StiffnessSolver::StiffnessSolver(GridShape shape, MaterialModel material, std::vector<int> fixed)
    : shape_(shape), material_(material), impl_(std::make_unique<Impl>()) {
  shape_.validate();
  material_.validate();
  k0_ = element_stiffness(material_.nu);

  const int ndof = shape_.dof_count();
  if (fixed.empty()) throw ParameterError("fixed DOF set must not be empty");
  auto& im = *impl_;
  im.reduced.assign(ndof, 0);
  for (int d : fixed) {
    if (d < 0 || d >= ndof) throw ParameterError("fixed DOF index out of range");
    im.reduced[d] = -1;
  }
  for (int d = 0; d < ndof; ++d) {
    if (im.reduced[d] == 0) {
      im.reduced[d] = static_cast<int>(im.free_dofs.size());
      im.free_dofs.push_back(d);
    }
  }
  const int nfree = static_cast<int>(im.free_dofs.size());
  if (nfree == 0) throw ParameterError("every DOF is fixed");

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<size_t>(shape_.nelx) * shape_.nely * 36);
  for (int elx = 0; elx < shape_.nelx; ++elx) {
    for (int ely = 0; ely < shape_.nely; ++ely) {
      const auto dofs = shape_.element_dofs(ely, elx);
      for (int j = 0; j < 8; ++j) {
        for (int i = 0; i < 8; ++i) {
          const int r = im.reduced[dofs[i]];
          const int c = im.reduced[dofs[j]];
          if (r >= 0 && c >= 0 && r >= c) trip.emplace_back(r, c, 1.0);
        }
      }
    }
  }
  im.k.resize(nfree, nfree);
  im.k.setFromTriplets(trip.begin(), trip.end());
  im.k.makeCompressed();

  const int nel = shape_.nelx * shape_.nely;
  im.value_slot.assign(static_cast<size_t>(nel) * 64, -1);
  const int* outer = im.k.outerIndexPtr();
  const int* inner = im.k.innerIndexPtr();
  for (int elx = 0; elx < shape_.nelx; ++elx) {
    for (int ely = 0; ely < shape_.nely; ++ely) {
      const int e = elx * shape_.nely + ely;
      const auto dofs = shape_.element_dofs(ely, elx);
      for (int j = 0; j < 8; ++j) {
        for (int i = 0; i < 8; ++i) {
          const int r = im.reduced[dofs[i]];
          const int c = im.reduced[dofs[j]];
          if (r < 0 || c < 0 || r < c) continue;
          const int* first = inner + outer[c];
          const int* last = inner + outer[c + 1];
          const int* hit = std::lower_bound(first, last, r);
          im.value_slot[static_cast<size_t>(e) * 64 + j * 8 + i] =
              static_cast<int>(hit - inner);
        }
      }
    }
  }
  im.llt.analyzePattern(im.k);
}

StiffnessSolver::~StiffnessSolver() = default;
StiffnessSolver::StiffnessSolver(StiffnessSolver&&) noexcept = default;
StiffnessSolver& StiffnessSolver::operator=(StiffnessSolver&&) noexcept = default;

FemSolution StiffnessSolver::solve(const Field& density, const Vector& loads) {
  check_density(shape_, density);
  check_vector(shape_, loads, "load vector");
  if (!loads.allFinite()) throw ParameterError("load vector has non-finite entries");

  auto& im = *impl_;
  FemSolution sol;
  sol.u = Vector::Zero(shape_.dof_count());
  if ((loads.array() == 0.0).all()) return sol;

  double* values = im.k.valuePtr();
  std::fill(values, values + im.k.nonZeros(), 0.0);
  for (int elx = 0; elx < shape_.nelx; ++elx) {
    for (int ely = 0; ely < shape_.nely; ++ely) {
      const int e = elx * shape_.nely + ely;
      const double young = material_.young(density(ely, elx));
      const int* slot = im.value_slot.data() + static_cast<size_t>(e) * 64;
      for (int j = 0; j < 8; ++j) {
        for (int i = 0; i < 8; ++i) {
          const int s = slot[j * 8 + i];
          if (s >= 0) values[s] += young * k0_(i, j);
        }
      }
    }
  }

  im.llt.factorize(im.k);
  if (im.llt.info() != Eigen::Success) {
    throw NumericalError("stiffness matrix factorization failed (matrix not positive definite)");
  }
  const int nfree = static_cast<int>(im.free_dofs.size());
  Vector f(nfree);
  for (int r = 0; r < nfree; ++r) f[r] = loads[im.free_dofs[r]];
  const Vector ur = im.llt.solve(f);
  if (im.llt.info() != Eigen::Success || !ur.allFinite()) {
    throw NumericalError("stiffness solve failed");
  }
  for (int r = 0; r < nfree; ++r) sol.u[im.free_dofs[r]] = ur[r];
  sol.compliance = loads.dot(sol.u);
  return sol;
}

FemSolution assemble_and_solve(const GridShape& shape, const Field& density,
                               const MaterialModel& material, const Vector& loads,
                               const std::vector<int>& fixed) {
  StiffnessSolver solver(shape, material, fixed);
  return solver.solve(density, loads);
}

Field compliance_per_element(const GridShape& shape, const Field& density,
                             const MaterialModel& material, const Vector& u) {
  shape.validate();
  check_density(shape, density);
  check_vector(shape, u, "displacement vector");
  const ElementMatrix k0 = element_stiffness(material.nu);
  Field ce(shape.nely, shape.nelx);
  Eigen::Matrix<double, 8, 1> ue;
  for (int elx = 0; elx < shape.nelx; ++elx) {
    for (int ely = 0; ely < shape.nely; ++ely) {
      const auto dofs = shape.element_dofs(ely, elx);
      for (int i = 0; i < 8; ++i) ue[i] = u[dofs[i]];
      ce(ely, elx) = std::max(0.0, ue.dot(k0 * ue));
    }
  }
  return ce;
}

Vector apply_stiffness(const GridShape& shape, const Field& density,
                       const MaterialModel& material, const Vector& v) {
  shape.validate();
  check_density(shape, density);
  check_vector(shape, v, "vector");
  const ElementMatrix k0 = element_stiffness(material.nu);
  Vector out = Vector::Zero(shape.dof_count());
  Eigen::Matrix<double, 8, 1> ve;
  for (int elx = 0; elx < shape.nelx; ++elx) {
    for (int ely = 0; ely < shape.nely; ++ely) {
      const auto dofs = shape.element_dofs(ely, elx);
      for (int i = 0; i < 8; ++i) ve[i] = v[dofs[i]];
      const Eigen::Matrix<double, 8, 1> fe = material.young(density(ely, elx)) * (k0 * ve);
      for (int i = 0; i < 8; ++i) out[dofs[i]] += fe[i];
    }
  }
  return out;
}

}  // namespace topoforge::fem
