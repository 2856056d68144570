#pragma once

// Plane-stress linear elasticity on a regular grid of unit-square bilinear
// quadrilaterals.
//
// Conventions
//   * Element (row, col): row = ely in [0, nely) grows downwards, col = elx.
//   * Node numbering is column-major: node(ely, elx) = (nely + 1) * elx + ely,
//     with ely in [0, nely] and elx in [0, nelx].
//   * Each node carries two DOFs, x then y: dof = 2 * node + {0, 1}.
//   * The y axis points up (towards row 0), so a positive y load pushes up.
//   * Element DOFs follow the corner order lower-left, lower-right,
//     upper-right, upper-left.

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/Core>

namespace topoforge::fem {

/// Element-wise scalar field, rows = nely, cols = nelx.
using Field = Eigen::ArrayXXd;
using Vector = Eigen::VectorXd;
using ElementMatrix = Eigen::Matrix<double, 8, 8>;

struct GridShape {
  int nelx = 32;
  int nely = 32;

  int node_count() const { return (nelx + 1) * (nely + 1); }
  int dof_count() const { return 2 * node_count(); }
  int node(int ely, int elx) const { return (nely + 1) * elx + ely; }
  /// Global DOFs of element (ely, elx) in local corner order.
  std::array<int, 8> element_dofs(int ely, int elx) const;

  void validate() const;
  bool operator==(const GridShape&) const = default;
};

struct MaterialModel {
  double e0 = 1.0;
  double emin = 1e-9;
  double nu = 0.3;
  double penal = 3.0;

  /// SIMP interpolation E(x) = emin + x^penal (e0 - emin).
  double young(double density) const;
  void validate() const;
};

struct FemSolution {
  Vector u;
  double compliance = 0.0;
};

/// Unit-Young's-modulus stiffness of a unit square element.
ElementMatrix element_stiffness(double nu);

/// All DOFs of the nodes on the left edge (elx = 0).
std::vector<int> left_edge_dofs(const GridShape& shape);

/// Reusable solver for one grid and one set of fixed DOFs. The sparsity
/// pattern and the fill-reducing ordering are computed once; every solve
/// only refactorizes numerically.
class StiffnessSolver {
 public:
  StiffnessSolver(GridShape shape, MaterialModel material, std::vector<int> fixed);
  ~StiffnessSolver();
  StiffnessSolver(StiffnessSolver&&) noexcept;
  StiffnessSolver& operator=(StiffnessSolver&&) noexcept;

  FemSolution solve(const Field& density, const Vector& loads);

  const GridShape& shape() const { return shape_; }
  const MaterialModel& material() const { return material_; }
  const ElementMatrix& k0() const { return k0_; }

 private:
  struct Impl;
  GridShape shape_;
  MaterialModel material_;
  ElementMatrix k0_;
  std::unique_ptr<Impl> impl_;
};

FemSolution assemble_and_solve(const GridShape& shape, const Field& density,
                               const MaterialModel& material, const Vector& loads,
                               const std::vector<int>& fixed);

/// Element energies u_e^T k0 u_e (unit modulus).
Field compliance_per_element(const GridShape& shape, const Field& density,
                             const MaterialModel& material, const Vector& u);

/// Global K(density) applied to a vector, matrix-free. Used by residual checks.
Vector apply_stiffness(const GridShape& shape, const Field& density,
                       const MaterialModel& material, const Vector& v);

}  // namespace topoforge::fem
