#include "topoforge/simp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "topoforge/errors.hpp"

namespace topoforge::simp {

void DesignSpec::validate() const {
  if (mask.rows() < 1 || mask.cols() < 1) throw ParameterError("mask: empty");
  if (fx.rows() != mask.rows() || fx.cols() != mask.cols()) {
    throw ParameterError("fx: shape differs from mask");
  }
  if (fy.rows() != mask.rows() || fy.cols() != mask.cols()) {
    throw ParameterError("fy: shape differs from mask");
  }
  if (!((mask == 0) || (mask == 1)).all()) throw ParameterError("mask: entries must be 0 or 1");
  if (!((fx >= -2) && (fx <= 2)).all()) throw ParameterError("fx: entries must lie in [-2, 2]");
  if (!((fy >= -2) && (fy <= 2)).all()) throw ParameterError("fy: entries must lie in [-2, 2]");
  if (((mask == 0) && ((fx != 0) || (fy != 0))).any()) {
    throw ParameterError("fx/fy: loads must be zero outside the design area");
  }
  const int loaded = ((fx != 0) || (fy != 0)).count();
  if (loaded > 4) throw ParameterError("fx/fy: at most 4 loaded elements allowed");
  if (!(volfrac >= 0.2 && volfrac <= 0.8)) {
    throw ParameterError("volfrac: must lie in [0.2, 0.8]");
  }
  if (design_element_count() == 0) throw ParameterError("mask: no design elements");
}

DesignSpec DesignSpec::blank(int nely, int nelx, double volfrac) {
  DesignSpec s;
  s.mask = IntField::Ones(nely, nelx);
  s.fx = IntField::Zero(nely, nelx);
  s.fy = IntField::Zero(nely, nelx);
  s.volfrac = volfrac;
  return s;
}

DesignSpec mirror_vertical(const DesignSpec& spec) {
  DesignSpec out;
  out.mask = spec.mask.colwise().reverse();
  out.fx = spec.fx.colwise().reverse();
  out.fy = -spec.fy.colwise().reverse();
  out.volfrac = spec.volfrac;
  return out;
}

void SimpConfig::validate() const {
  if (!(rmin >= 1.0)) throw ParameterError("simp config: rmin must be >= 1");
  if (!(move > 0.0 && move <= 1.0)) throw ParameterError("simp config: move must lie in (0, 1]");
  if (!(eta > 0.0)) throw ParameterError("simp config: eta must be > 0");
  if (!(tol > 0.0)) throw ParameterError("simp config: tol must be > 0");
  if (max_iterations < 1) throw ParameterError("simp config: max_iterations must be >= 1");
  if (!(bisection_tol > 0.0)) throw ParameterError("simp config: bisection_tol must be > 0");
  if (!(lambda_lo > 0.0 && lambda_lo < lambda_hi)) {
    throw ParameterError("simp config: need 0 < lambda_lo < lambda_hi");
  }
  material.validate();
}

fem::Vector element_forces_to_nodal(const Field& fx, const Field& fy) {
  if (fx.rows() != fy.rows() || fx.cols() != fy.cols()) {
    throw ParameterError("element_forces_to_nodal: fx and fy shapes differ");
  }
  const fem::GridShape shape{static_cast<int>(fx.cols()), static_cast<int>(fx.rows())};
  shape.validate();
  fem::Vector f = fem::Vector::Zero(shape.dof_count());
  for (int elx = 0; elx < shape.nelx; ++elx) {
    for (int ely = 0; ely < shape.nely; ++ely) {
      const double qx = 0.25 * fx(ely, elx);
      const double qy = 0.25 * fy(ely, elx);
      if (qx == 0.0 && qy == 0.0) continue;
      const auto dofs = shape.element_dofs(ely, elx);
      for (int corner = 0; corner < 4; ++corner) {
        f[dofs[2 * corner]] += qx;
        f[dofs[2 * corner + 1]] += qy;
      }
    }
  }
  return f;
}

fem::Vector element_forces_to_nodal(const DesignSpec& spec) {
  return element_forces_to_nodal(spec.fx.cast<double>(), spec.fy.cast<double>());
}

DensityFilter::DensityFilter(int nely, int nelx, double rmin)
    : nely_(nely), nelx_(nelx), reach_(static_cast<int>(std::ceil(rmin)) - 1), rmin_(rmin) {
  if (!(rmin >= 1.0)) throw ParameterError("density filter: rmin must be >= 1");
  if (nely < 1 || nelx < 1) throw ParameterError("density filter: empty grid");
  const int width = 2 * reach_ + 1;
  stencil_.resize(static_cast<size_t>(width) * width);
  for (int dx = -reach_; dx <= reach_; ++dx) {
    for (int dy = -reach_; dy <= reach_; ++dy) {
      stencil_[(dx + reach_) * width + (dy + reach_)] = std::max(0.0, rmin_ - std::hypot(dx, dy));
    }
  }
  weight_sum_ = correlate(Field::Ones(nely, nelx));
}

Field DensityFilter::correlate(const Field& v) const {
  const int width = 2 * reach_ + 1;
  Field out(nely_, nelx_);
  for (int i = 0; i < nelx_; ++i) {
    for (int j = 0; j < nely_; ++j) {
      double s = 0.0;
      for (int k = std::max(i - reach_, 0); k <= std::min(i + reach_, nelx_ - 1); ++k) {
        const double* w = stencil_.data() + (k - i + reach_) * width + reach_ - j;
        for (int l = std::max(j - reach_, 0); l <= std::min(j + reach_, nely_ - 1); ++l) {
          s += w[l] * v(l, k);
        }
      }
      out(j, i) = s;
    }
  }
  return out;
}

Field DensityFilter::apply(const Field& v) const {
  if (v.rows() != nely_ || v.cols() != nelx_) throw ParameterError("density filter: shape mismatch");
  return correlate(v) / weight_sum_;
}

Field DensityFilter::apply_transpose(const Field& v) const {
  if (v.rows() != nely_ || v.cols() != nelx_) throw ParameterError("density filter: shape mismatch");
  return correlate(v / weight_sum_);
}

Field density_filter(const Field& v, double rmin) {
  return DensityFilter(static_cast<int>(v.rows()), static_cast<int>(v.cols()), rmin).apply(v);
}

double design_volume(const Field& rho, const IntField& mask) {
  if (rho.rows() != mask.rows() || rho.cols() != mask.cols()) {
    throw ParameterError("design_volume: shape mismatch");
  }
  const int n = mask.count();
  if (n == 0) throw ParameterError("design_volume: empty design area");
  return (rho * mask.cast<double>()).sum() / n;
}

Field uniform_field(const DesignSpec& spec) {
  return spec.volfrac * spec.mask.cast<double>();
}

Field oc_update(const Field& rho, const Field& dc, const Field& dv, double volfrac,
                const IntField& mask, const SimpConfig& config, const PhysicalMap& to_physical) {
  const auto rows = rho.rows();
  const auto cols = rho.cols();
  if (dc.rows() != rows || dc.cols() != cols || dv.rows() != rows || dv.cols() != cols ||
      mask.rows() != rows || mask.cols() != cols) {
    throw ParameterError("oc_update: shape mismatch");
  }
  if (((mask == 1) && !(dv > 0.0)).any()) {
    throw ParameterError("oc_update: dv must be positive on the design area");
  }
  const Field active = mask.cast<double>();
  // Negative of dc, floored at zero against roundoff.
  const Field gain = (-dc).max(0.0) / dv.max(1e-300);
  const Field lower = (rho - config.move).max(0.0);
  const Field upper = (rho + config.move).min(1.0);

  auto candidate = [&](double lambda) -> Field {
    const Field ratio = gain / lambda;
    const Field scaled = rho * (config.eta == 0.5 ? Field(ratio.sqrt()) : Field(ratio.pow(config.eta)));
    return scaled.max(lower).min(upper) * active;
  };
  auto volume = [&](const Field& x) {
    return design_volume(to_physical ? to_physical(x) : x, mask);
  };

  double l1 = config.lambda_lo;
  double l2 = config.lambda_hi;
  const double vol_lo = volume(candidate(l1));
  const double vol_hi = volume(candidate(l2));
  if (vol_lo < volfrac - config.bisection_tol || vol_hi > volfrac + config.bisection_tol) {
    std::ostringstream msg;
    msg << "oc_update: multiplier bisection cannot bracket volfrac " << volfrac
        << " (volume " << vol_lo << " at lambda " << l1 << ", " << vol_hi << " at lambda " << l2
        << ")";
    throw NumericalError(msg.str());
  }
  while ((l2 - l1) / (l1 + l2) > config.bisection_tol) {
    const double mid = 0.5 * (l1 + l2);
    if (volume(candidate(mid)) > volfrac) {
      l1 = mid;
    } else {
      l2 = mid;
    }
  }
  return candidate(0.5 * (l1 + l2));
}

namespace {

std::vector<int> clamped_dofs(const fem::GridShape& shape) { return fem::left_edge_dofs(shape); }

}  // namespace

double compliance_of(const DesignSpec& spec, const Field& rho, const fem::MaterialModel& material) {
  const auto shape = spec.shape();
  return fem::assemble_and_solve(shape, rho, material, element_forces_to_nodal(spec),
                                 clamped_dofs(shape))
      .compliance;
}

SimpResult optimize(const DesignSpec& spec, const SimpConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  spec.validate();
  config.validate();

  SimpResult result;
  const auto shape = spec.shape();
  const auto& mat = config.material;
  Field x = uniform_field(spec);
  auto finish = [&](SimpResult r) {
    r.elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
  };
  if (!spec.has_loads()) {
    result.rho = x;
    result.compliance = 0.0;
    result.converged = true;
    return finish(result);
  }

  const fem::Vector loads = element_forces_to_nodal(spec);
  fem::StiffnessSolver solver(shape, mat, clamped_dofs(shape));
  const DensityFilter filter(shape.nely, shape.nelx, config.rmin);
  const Field active = spec.mask.cast<double>();
  const PhysicalMap to_physical = [&](const Field& v) -> Field {
    return (filter.apply(v) * active).max(0.0).min(1.0);
  };
  const Field dv = filter.apply_transpose(active);

  Field phys = x;
  for (int iter = 1; iter <= config.max_iterations; ++iter) {
    const fem::FemSolution sol = solver.solve(phys, loads);
    const Field ce = fem::compliance_per_element(shape, phys, mat, sol.u);
    const Field dc_phys = -mat.penal * (mat.e0 - mat.emin) * (mat.penal == 3.0 ? Field(phys.square()) : Field(phys.pow(mat.penal - 1.0))) * ce;
    const Field dc = filter.apply_transpose(dc_phys * active);
    const Field next = oc_update(x, dc, dv, spec.volfrac, spec.mask, config, to_physical);
    const double change = (next - x).abs().maxCoeff();
    x = next;
    phys = to_physical(x);
    result.iterations = iter;
    if (change < config.tol) {
      result.converged = true;
      break;
    }
  }
  result.rho = phys;
  result.compliance = solver.solve(phys, loads).compliance;
  return finish(result);
}

}  // namespace topoforge::simp
