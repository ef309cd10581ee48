#include "gust/homogenize.hpp"

#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gust {

namespace {

// Corner displacements of a unit pixel under the three unit macroscopic
// strains (e11, e22, engineering g12), local coordinates.
constexpr std::array<std::array<double, 8>, 3> kUnitStrainDisp = {{
    {0, 0, 1, 0, 1, 0, 0, 0},
    {0, 0, 0, 0, 0, 1, 0, 1},
    {0, 0, 0, 0.5, 0.5, 0.5, 0.5, 0},
}};

struct Mesh {
  int h = 0, w = 0;
  int ndof = 0;
  std::vector<std::array<int, 8>> edof;  // per element, wrapped node dofs
  std::vector<double> scale;             // per-element stiffness factor
};

Mesh build_mesh(const BinaryCell& cell, const Material& mat, double void_ratio) {
  Mesh mesh;
  mesh.h = cell.height;
  mesh.w = cell.width;
  mesh.ndof = 2 * cell.height * cell.width;
  mesh.edof.resize(std::size_t(cell.height) * cell.width);
  mesh.scale.resize(mesh.edof.size());
  auto node = [&](int r, int c) {
    return ((r % cell.height) * cell.width + (c % cell.width));
  };
  for (int r = 0; r < cell.height; ++r) {
    for (int c = 0; c < cell.width; ++c) {
      int n0 = node(r, c), n1 = node(r, c + 1), n2 = node(r + 1, c + 1), n3 = node(r + 1, c);
      std::size_t e = std::size_t(r) * cell.width + c;
      mesh.edof[e] = {2 * n0, 2 * n0 + 1, 2 * n1, 2 * n1 + 1,
                      2 * n2, 2 * n2 + 1, 2 * n3, 2 * n3 + 1};
      mesh.scale[e] = cell.values[e] ? mat.E : mat.E * void_ratio;
    }
  }
  return mesh;
}

struct Csr {
  std::vector<int> ptr, col;
  std::vector<double> val;
  std::vector<double> diag;
};

Csr assemble(const Mesh& mesh, const std::array<std::array<double, 8>, 8>& ke,
             const std::array<int, 2>& pinned) {
  struct Triplet {
    int r, c;
    double v;
  };
  std::vector<Triplet> trips;
  trips.reserve(mesh.edof.size() * 64 + 2);
  auto is_pinned = [&](int dof) { return dof == pinned[0] || dof == pinned[1]; };
  for (std::size_t e = 0; e < mesh.edof.size(); ++e) {
    double s = mesh.scale[e];
    for (int a = 0; a < 8; ++a) {
      int ra = mesh.edof[e][a];
      if (is_pinned(ra)) continue;
      for (int b = 0; b < 8; ++b) {
        int cb = mesh.edof[e][b];
        if (is_pinned(cb)) continue;
        trips.push_back({ra, cb, s * ke[a][b]});
      }
    }
  }
  trips.push_back({pinned[0], pinned[0], 1.0});
  trips.push_back({pinned[1], pinned[1], 1.0});
  std::stable_sort(trips.begin(), trips.end(),
                   [](const Triplet& x, const Triplet& y) {
                     return x.r != y.r ? x.r < y.r : x.c < y.c;
                   });
  Csr csr;
  csr.ptr.assign(mesh.ndof + 1, 0);
  for (std::size_t i = 0; i < trips.size();) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < trips.size() && trips[j].r == trips[i].r && trips[j].c == trips[i].c)
      sum += trips[j++].v;
    csr.col.push_back(trips[i].c);
    csr.val.push_back(sum);
    csr.ptr[trips[i].r + 1]++;
    i = j;
  }
  for (int r = 0; r < mesh.ndof; ++r) csr.ptr[r + 1] += csr.ptr[r];
  csr.diag.assign(mesh.ndof, 1.0);
  for (int r = 0; r < mesh.ndof; ++r)
    for (int k = csr.ptr[r]; k < csr.ptr[r + 1]; ++k)
      if (csr.col[k] == r) csr.diag[r] = csr.val[k];
  return csr;
}

void matvec(const Csr& csr, const std::vector<double>& x, std::vector<double>& y) {
  int n = int(csr.ptr.size()) - 1;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < n; ++r) {
    double acc = 0.0;
    for (int k = csr.ptr[r]; k < csr.ptr[r + 1]; ++k) acc += csr.val[k] * x[csr.col[k]];
    y[r] = acc;
  }
}

// Jacobi-preconditioned conjugate gradient.
std::vector<double> solve_cg(const Csr& csr, const std::vector<double>& b, double tol,
                             long max_iter) {
  const int n = int(b.size());
  std::vector<double> x(n, 0.0), r = b, z(n), p(n), ap(n);
  double bnorm = 0.0;
  for (double v : b) bnorm += v * v;
  bnorm = std::sqrt(bnorm);
  if (bnorm == 0.0) return x;
  for (int i = 0; i < n; ++i) z[i] = r[i] / csr.diag[i];
  p = z;
  double rz = 0.0;
  for (int i = 0; i < n; ++i) rz += r[i] * z[i];
  for (long it = 0; it < max_iter; ++it) {
    matvec(csr, p, ap);
    double pap = 0.0;
    for (int i = 0; i < n; ++i) pap += p[i] * ap[i];
    double alpha = rz / pap;
    double rnorm = 0.0;
    for (int i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
      rnorm += r[i] * r[i];
    }
    if (std::sqrt(rnorm) <= tol * bnorm) return x;
    double rz_new = 0.0;
    for (int i = 0; i < n; ++i) {
      z[i] = r[i] / csr.diag[i];
      rz_new += r[i] * z[i];
    }
    double beta = rz_new / rz;
    rz = rz_new;
    for (int i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  throw SolveDiverged("conjugate gradient did not reach tolerance " + std::to_string(tol));
}

}  // namespace

void validate_material(const Material& mat) {
  if (mat.E <= 0.0) throw std::invalid_argument("Material: E must be positive");
  if (mat.nu <= -1.0 || mat.nu >= 0.5)
    throw std::invalid_argument("Material: nu must lie in (-1, 0.5)");
}

ElasticTensor constituent_tensor(const Material& mat) {
  validate_material(mat);
  double a = mat.E / (1.0 - mat.nu * mat.nu);
  ElasticTensor t;
  t.C = {{{a, a * mat.nu, 0.0}, {a * mat.nu, a, 0.0}, {0.0, 0.0, a * (1.0 - mat.nu) / 2.0}}};
  return t;
}

std::array<std::array<double, 8>, 8> element_stiffness(const Material& mat) {
  validate_material(mat);
  const double nu = mat.nu;
  const double a = mat.E / (1.0 - nu * nu);
  const std::array<double, 8> k = {
      a * (0.5 - nu / 6.0),   a * (0.125 + nu / 8.0),      a * (-0.25 - nu / 12.0),
      a * (-0.125 + 3.0 * nu / 8.0), a * (-0.25 + nu / 12.0), a * (-0.125 - nu / 8.0),
      a * (nu / 6.0),         a * (0.125 - 3.0 * nu / 8.0)};
  constexpr std::array<std::array<int, 8>, 8> idx = {{{0, 1, 2, 3, 4, 5, 6, 7},
                                                      {1, 0, 7, 6, 5, 4, 3, 2},
                                                      {2, 7, 0, 5, 6, 3, 4, 1},
                                                      {3, 6, 5, 0, 7, 2, 1, 4},
                                                      {4, 5, 6, 7, 0, 1, 2, 3},
                                                      {5, 4, 3, 2, 1, 0, 7, 6},
                                                      {6, 3, 4, 1, 2, 7, 0, 5},
                                                      {7, 2, 1, 4, 3, 6, 5, 0}}};
  std::array<std::array<double, 8>, 8> ke{};
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) ke[i][j] = k[idx[i][j]];
  return ke;
}

ElasticTensor homogenize(const BinaryCell& cell, const Material& solid, double void_ratio,
                         SolverKind solver) {
  validate_cell(cell);
  validate_material(solid);
  if (void_ratio <= 0.0 || void_ratio >= 1.0)
    throw std::invalid_argument("homogenize: void_ratio must lie in (0, 1)");
  if (volume_fraction(cell) == 0.0)
    std::clog << "gust: homogenize on an all-void cell; returning the ersatz tensor\n";

  const auto ke = element_stiffness(solid);
  Mesh mesh = build_mesh(cell, solid, void_ratio);
  const std::array<int, 2> pinned = {0, 1};

  // Assembled loads from the three unit strains.
  std::array<std::vector<double>, 3> rhs;
  for (int lc = 0; lc < 3; ++lc) {
    rhs[lc].assign(mesh.ndof, 0.0);
    for (std::size_t e = 0; e < mesh.edof.size(); ++e) {
      for (int a = 0; a < 8; ++a) {
        double f = 0.0;
        for (int b = 0; b < 8; ++b) f += ke[a][b] * kUnitStrainDisp[lc][b];
        rhs[lc][mesh.edof[e][a]] += mesh.scale[e] * f;
      }
    }
    rhs[lc][pinned[0]] = 0.0;
    rhs[lc][pinned[1]] = 0.0;
  }

  bool use_direct = solver == SolverKind::Direct ||
                    (solver == SolverKind::Auto && cell.height <= 64 && cell.width <= 64);
  std::array<std::vector<double>, 3> chi;
  if (use_direct) {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(mesh.edof.size() * 64 + 2);
    auto is_pinned = [&](int dof) { return dof == pinned[0] || dof == pinned[1]; };
    for (std::size_t e = 0; e < mesh.edof.size(); ++e)
      for (int a = 0; a < 8; ++a) {
        if (is_pinned(mesh.edof[e][a])) continue;
        for (int b = 0; b < 8; ++b) {
          if (is_pinned(mesh.edof[e][b])) continue;
          trips.emplace_back(mesh.edof[e][a], mesh.edof[e][b], mesh.scale[e] * ke[a][b]);
        }
      }
    trips.emplace_back(pinned[0], pinned[0], 1.0);
    trips.emplace_back(pinned[1], pinned[1], 1.0);
    Eigen::SparseMatrix<double> K(mesh.ndof, mesh.ndof);
    K.setFromTriplets(trips.begin(), trips.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(K);
    if (ldlt.info() != Eigen::Success)
      throw SolveDiverged("sparse factorization failed");
    for (int lc = 0; lc < 3; ++lc) {
      Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(rhs[lc].data(), mesh.ndof);
      Eigen::VectorXd sol = ldlt.solve(b);
      chi[lc].assign(sol.data(), sol.data() + mesh.ndof);
    }
  } else {
    Csr csr = assemble(mesh, ke, pinned);
    for (int lc = 0; lc < 3; ++lc)
      chi[lc] = solve_cg(csr, rhs[lc], 1e-8, 20L * mesh.ndof);
  }

  // Mutual-energy effective tensor.
  ElasticTensor out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out.C[i][j] = 0.0;
  for (std::size_t e = 0; e < mesh.edof.size(); ++e) {
    std::array<std::array<double, 8>, 3> werk;
    for (int lc = 0; lc < 3; ++lc)
      for (int a = 0; a < 8; ++a)
        werk[lc][a] = kUnitStrainDisp[lc][a] - chi[lc][mesh.edof[e][a]];
    for (int i = 0; i < 3; ++i)
      for (int j = i; j < 3; ++j) {
        double energy = 0.0;
        for (int a = 0; a < 8; ++a) {
          double kw = 0.0;
          for (int b = 0; b < 8; ++b) kw += ke[a][b] * werk[j][b];
          energy += werk[i][a] * kw;
        }
        out.C[i][j] += mesh.scale[e] * energy;
      }
  }
  double vol = double(mesh.edof.size());
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) {
      out.C[i][j] /= vol;
      out.C[j][i] = out.C[i][j];
    }
  return out;
}

std::vector<PropertyRow> property_table(const std::vector<BinaryCell>& cells,
                                        const Material& mat, double void_ratio,
                                        SolverKind solver) {
  std::vector<PropertyRow> rows(cells.size());
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < (long long)cells.size(); ++i) {
    rows[i].id = std::size_t(i);
    try {
      rows[i].vf = volume_fraction(cells[i]);
      rows[i].tensor = homogenize(cells[i], mat, void_ratio, solver);
    } catch (const std::exception& ex) {
      rows[i].failed = true;
      rows[i].error = ex.what();
    }
  }
  return rows;
}

}  // namespace gust
