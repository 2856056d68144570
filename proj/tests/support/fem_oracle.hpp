#pragma once

// Dense, independently written FEM references for the sparse solver.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "topoforge/fem.hpp"

namespace fem_oracle {

using namespace topoforge::fem;

// Independent reference: integrate B^T D B over the unit square with 2x2
// Gauss points. Corners ordered (0,0), (1,0), (1,1), (0,1) with y up.
inline ElementMatrix quadrature_stiffness(double nu) {
  Eigen::Matrix3d d;
  d << 1, nu, 0, nu, 1, 0, 0, 0, (1 - nu) / 2;
  d /= (1 - nu * nu);
  const double g = 0.5 / std::sqrt(3.0);
  const double pts[2] = {0.5 - g, 0.5 + g};
  ElementMatrix k = ElementMatrix::Zero();
  for (double xi : pts) {
    for (double eta : pts) {
      const double dndx[4] = {-(1 - eta), (1 - eta), eta, -eta};
      const double dndy[4] = {-(1 - xi), -xi, xi, (1 - xi)};
      Eigen::Matrix<double, 3, 8> b = Eigen::Matrix<double, 3, 8>::Zero();
      for (int n = 0; n < 4; ++n) {
        b(0, 2 * n) = dndx[n];
        b(1, 2 * n + 1) = dndy[n];
        b(2, 2 * n) = dndy[n];
        b(2, 2 * n + 1) = dndx[n];
      }
      k += 0.25 * b.transpose() * d * b;
    }
  }
  return k;
}

// Dense assembly written out independently of the library's numbering helpers.
inline Eigen::MatrixXd dense_stiffness(int nely, int nelx, const Field& density, const MaterialModel& m) {
  const int ndof = 2 * (nelx + 1) * (nely + 1);
  const ElementMatrix k0 = quadrature_stiffness(m.nu);
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(ndof, ndof);
  for (int ex = 0; ex < nelx; ++ex) {
    for (int ey = 0; ey < nely; ++ey) {
      const int top_left = (nely + 1) * ex + ey;
      const int top_right = (nely + 1) * (ex + 1) + ey;
      const int nodes[4] = {top_left + 1, top_right + 1, top_right, top_left};
      int dofs[8];
      for (int c = 0; c < 4; ++c) {
        dofs[2 * c] = 2 * nodes[c];
        dofs[2 * c + 1] = 2 * nodes[c] + 1;
      }
      const double e = m.emin + std::pow(density(ey, ex), m.penal) * (m.e0 - m.emin);
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) k(dofs[i], dofs[j]) += e * k0(i, j);
    }
  }
  return k;
}

inline Vector dense_solve(int nely, int nelx, const Field& density, const MaterialModel& m,
                   const Vector& f, const std::vector<int>& fixed) {
  const Eigen::MatrixXd k = dense_stiffness(nely, nelx, density, m);
  std::vector<int> free;
  for (int d = 0; d < k.rows(); ++d)
    if (std::find(fixed.begin(), fixed.end(), d) == fixed.end()) free.push_back(d);
  Eigen::MatrixXd kr(free.size(), free.size());
  Vector fr(free.size());
  for (size_t i = 0; i < free.size(); ++i) {
    fr[i] = f[free[i]];
    for (size_t j = 0; j < free.size(); ++j) kr(i, j) = k(free[i], free[j]);
  }
  const Vector ur = kr.fullPivLu().solve(fr);
  Vector u = Vector::Zero(k.rows());
  for (size_t i = 0; i < free.size(); ++i) u[free[i]] = ur[i];
  return u;
}

inline Field random_density(std::mt19937_64& rng, int nely, int nelx) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Field d(nely, nelx);
  for (int i = 0; i < d.size(); ++i) d.data()[i] = uni(rng);
  return d;
}

inline Vector random_loads(std::mt19937_64& rng, const GridShape& shape, const std::vector<int>& fixed) {
  std::uniform_real_distribution<double> uni(-2.0, 2.0);
  Vector f(shape.dof_count());
  for (int i = 0; i < f.size(); ++i) f[i] = uni(rng);
  for (int d : fixed) f[d] = 0.0;
  return f;
}

inline double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace fem_oracle
