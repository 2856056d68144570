#pragma once

// SIMP topology optimization with a density filter and optimality-criteria
// updates. Densities are stored as fem::Field (rows = y, cols = x).

#include <functional>
#include <vector>

#include <Eigen/Core>

#include "topoforge/fem.hpp"

namespace topoforge::simp {

using fem::Field;
using IntField = Eigen::ArrayXXi;

/// Problem statement on a 32x32 (or any) element grid. The left edge is clamped.
struct DesignSpec {
  IntField mask;  ///< 1 = design area, 0 = material may not be placed
  IntField fx;    ///< element load in x, integers in [-2, 2]
  IntField fy;    ///< element load in y (positive = up), integers in [-2, 2]
  double volfrac = 0.5;

  fem::GridShape shape() const {
    return {static_cast<int>(mask.cols()), static_cast<int>(mask.rows())};
  }
  int design_element_count() const { return mask.count(); }
  bool has_loads() const { return (fx != 0).any() || (fy != 0).any(); }

  /// Throws ParameterError naming the first violated invariant.
  void validate() const;

  /// An all-design, load-free spec of the given size.
  static DesignSpec blank(int nely = 32, int nelx = 32, double volfrac = 0.5);
};

/// Reflection about the horizontal midline: rows reversed, y loads negated.
DesignSpec mirror_vertical(const DesignSpec& spec);

struct SimpConfig {
  double rmin = 1.5;
  double move = 0.2;
  double eta = 0.5;
  double tol = 0.01;
  int max_iterations = 200;
  double bisection_tol = 1e-3;
  double lambda_lo = 1e-9;
  double lambda_hi = 1e9;
  fem::MaterialModel material{};

  void validate() const;
};

struct SimpResult {
  Field rho;
  double compliance = 0.0;
  int iterations = 0;
  bool converged = false;
  double elapsed = 0.0;  ///< seconds
};

/// Quarter-splits each element load onto its four corner nodes.
fem::Vector element_forces_to_nodal(const Field& fx, const Field& fy);
fem::Vector element_forces_to_nodal(const DesignSpec& spec);

/// Precomputed linear filter with weights max(0, rmin - dist) between element centres.
class DensityFilter {
 public:
  DensityFilter(int nely, int nelx, double rmin);

  /// sum_j w_ej v_j / sum_j w_ej
  Field apply(const Field& v) const;
  /// Adjoint of apply(): sum_j w_je v_j / sum_k w_jk. Used to chain-rule sensitivities.
  Field apply_transpose(const Field& v) const;

  int nely() const { return nely_; }
  int nelx() const { return nelx_; }

 private:
  int nely_;
  int nelx_;
  int reach_;
  double rmin_;
  std::vector<double> stencil_;  // (2 reach + 1)^2 weights indexed by offset
  Field weight_sum_;

  Field correlate(const Field& v) const;
};

Field density_filter(const Field& v, double rmin);

/// Maps design variables to the densities whose volume is constrained.
using PhysicalMap = std::function<Field(const Field&)>;

/// One optimality-criteria step. The multiplier is bisected so that the mean
/// of to_physical(rho_new) over mask-1 elements matches volfrac; without a
/// map the design variables themselves are constrained. rho_new is 0 on
/// mask-0 elements.
Field oc_update(const Field& rho, const Field& dc, const Field& dv, double volfrac,
                const IntField& mask, const SimpConfig& config,
                const PhysicalMap& to_physical = {});

/// Mean of rho over mask-1 elements.
double design_volume(const Field& rho, const IntField& mask);

/// Uniform volfrac on the design area, 0 elsewhere.
Field uniform_field(const DesignSpec& spec);

SimpResult optimize(const DesignSpec& spec, const SimpConfig& config = {});

/// FEM compliance of an arbitrary density field under the spec's loads and clamped left edge.
double compliance_of(const DesignSpec& spec, const Field& rho,
                     const fem::MaterialModel& material = {});

}  // namespace topoforge::simp
