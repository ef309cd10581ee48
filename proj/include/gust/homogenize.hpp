#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "gust/geometry.hpp"

namespace gust {

struct SolveDiverged : std::runtime_error {
  explicit SolveDiverged(const std::string& what) : std::runtime_error(what) {}
};

// Normalized plane-stress constituent.
struct Material {
  double E = 1.0;
  double nu = 0.3;
};

void validate_material(const Material& mat);

// Symmetric 3x3 stiffness in Voigt order (11, 22, 12); C33 is the shear entry.
struct ElasticTensor {
  std::array<std::array<double, 3>, 3> C{};

  double c11() const { return C[0][0]; }
  double c12() const { return C[0][1]; }
  double c22() const { return C[1][1]; }
  double c33() const { return C[2][2]; }
};

// Plane-stress constitutive matrix of the solid material.
ElasticTensor constituent_tensor(const Material& mat);

// Exact stiffness of a unit-square bilinear quadrilateral, local nodes
// (0,0),(1,0),(1,1),(0,1), dofs [u0x u0y u1x u1y u2x u2y u3x u3y].
std::array<std::array<double, 8>, 8> element_stiffness(const Material& mat);

enum class SolverKind { Auto, Cg, Direct };

// Periodic FE homogenization with one element per pixel; void pixels carry
// E * void_ratio. Energy-based effective tensor over the three unit strains.
ElasticTensor homogenize(const BinaryCell& cell, const Material& solid,
                         double void_ratio = 1e-9, SolverKind solver = SolverKind::Auto);

struct PropertyRow {
  std::size_t id = 0;
  ElasticTensor tensor;
  double vf = 0.0;
  bool failed = false;
  std::string error;
};

std::vector<PropertyRow> property_table(const std::vector<BinaryCell>& cells,
                                        const Material& mat, double void_ratio = 1e-9,
                                        SolverKind solver = SolverKind::Auto);

}  // namespace gust
