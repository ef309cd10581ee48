#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gust/geometry.hpp"
#include "gust/rng.hpp"

namespace gust {

struct NoInteriorMaterial : std::runtime_error {
  NoInteriorMaterial() : std::runtime_error("hole nucleation: no interior material pixels") {}
};
struct DegenerateCovariance : std::runtime_error {
  DegenerateCovariance() : std::runtime_error("covariance sampling: diagonal underflow persisted") {}
};
struct DatasetDegenerate : std::runtime_error {
  explicit DatasetDegenerate(const std::string& what) : std::runtime_error(what) {}
};

// Free-form deformation over an m x m Bernstein control lattice spanning the
// full image domain; control points perturbed by N(0, sigma^2 I) pixels.
struct FFDConfig {
  int m = 4;
  double sigma = 0.0;
};

// Gaussian-bump hole carving in SDF space. alpha <= 0 selects the automatic
// amplitude 1.5 * max positive SDF value of the input field.
struct HoleConfig {
  double alpha = 0.0;
  double cov_mean = 3.0;
  double cov_std = 1.0;
  double offdiag_fraction_max = 0.8;
};

enum class OpKind { Ffd, Hole, Dilate, Erode };

struct PipelineOp {
  OpKind kind = OpKind::Ffd;
  FFDConfig ffd;
  HoleConfig hole;
  MorphScale morph;
};

struct PerturbPipeline {
  std::vector<PipelineOp> operators;
  std::vector<double> length_distribution;    // P(l = index), index from 0
  std::vector<double> operator_distribution;  // over operators
};

enum class Role : std::uint8_t { Nominal = 0, Fabricated = 1 };

struct DatasetRecord {
  std::uint32_t nominal_id = 0;
  Role role = Role::Nominal;
  BinaryCell cell;
};

struct PairedDataset {
  std::vector<DatasetRecord> records;
  std::uint32_t variants_per_nominal = 0;

  // (nominal, fabricated) index pairs into records, in record order.
  std::vector<std::pair<std::size_t, std::size_t>> pairs() const;
};

void validate_ffd(const FFDConfig& cfg);
void validate_hole(const HoleConfig& cfg);
void validate_pipeline(const PerturbPipeline& pipe);
void validate_dataset(const PairedDataset& ds);

// Bernstein basis B_i^{n}(t) for i = 0..n.
std::vector<double> bernstein_basis(int n, double t);

// Per-control-point (dx, dy) offsets, row-major over the lattice; dx first.
std::vector<std::array<double, 2>> sample_ffd_offsets(const FFDConfig& cfg, RngStream& rng);

// Deterministic core: backward-warp of the cell's SDF under the Bernstein
// displacement field given explicit control-point offsets.
BinaryCell ffd_deform_with_offsets(const BinaryCell& cell, int m,
                                   const std::vector<std::array<double, 2>>& offsets);
BinaryCell ffd_deform(const BinaryCell& cell, const FFDConfig& cfg, RngStream& rng);

std::array<double, 4> sample_covariance(const HoleConfig& cfg, RngStream& rng);  // {s11,s12,s21,s22}

// Deterministic core of the hole operator at an explicit seed location.
SDFGrid nucleate_hole_at(const SDFGrid& sdf, double mu_r, double mu_c,
                         const std::array<double, 4>& sigma, double alpha);
SDFGrid nucleate_hole(const SDFGrid& sdf, const HoleConfig& cfg, RngStream& rng);

BinaryCell apply_pipeline(const BinaryCell& nominal, const PerturbPipeline& pipe, RngStream& rng);

PairedDataset build_dataset(const std::vector<BinaryCell>& nominals, const PerturbPipeline& pipe,
                            int variants, std::uint64_t seed);

}  // namespace gust
