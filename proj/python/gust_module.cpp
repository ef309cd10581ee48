#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gust/baselines.hpp"
#include "gust/diffusion.hpp"
#include "gust/geometry.hpp"
#include "gust/homogenize.hpp"
#include "gust/io.hpp"
#include "gust/metrics.hpp"
#include "gust/pipeline.hpp"

namespace py = pybind11;

namespace {

gust::BinaryCell cell_from_array(const py::array_t<std::uint8_t>& arr) {
  if (arr.ndim() != 2) throw py::value_error("cell must be a 2-D uint8 array");
  gust::BinaryCell cell;
  cell.height = int(arr.shape(0));
  cell.width = int(arr.shape(1));
  cell.values.resize(std::size_t(cell.height) * cell.width);
  auto r = arr.unchecked<2>();
  for (int i = 0; i < cell.height; ++i)
    for (int j = 0; j < cell.width; ++j) cell.values[std::size_t(i) * cell.width + j] = r(i, j);
  gust::validate_cell(cell);
  return cell;
}

py::array_t<std::uint8_t> cell_to_array(const gust::BinaryCell& cell) {
  py::array_t<std::uint8_t> out({cell.height, cell.width});
  auto w = out.mutable_unchecked<2>();
  for (int i = 0; i < cell.height; ++i)
    for (int j = 0; j < cell.width; ++j) w(i, j) = cell.at(i, j);
  return out;
}

gust::SDFGrid sdf_from_array(const py::array_t<double>& arr) {
  if (arr.ndim() != 2) throw py::value_error("sdf must be a 2-D float64 array");
  gust::SDFGrid sdf;
  sdf.height = int(arr.shape(0));
  sdf.width = int(arr.shape(1));
  sdf.values.resize(std::size_t(sdf.height) * sdf.width);
  auto r = arr.unchecked<2>();
  for (int i = 0; i < sdf.height; ++i)
    for (int j = 0; j < sdf.width; ++j) sdf.values[std::size_t(i) * sdf.width + j] = r(i, j);
  return sdf;
}

py::array_t<double> sdf_to_array(const gust::SDFGrid& sdf) {
  py::array_t<double> out({sdf.height, sdf.width});
  auto w = out.mutable_unchecked<2>();
  for (int i = 0; i < sdf.height; ++i)
    for (int j = 0; j < sdf.width; ++j) w(i, j) = sdf.at(i, j);
  return out;
}

std::vector<std::array<double, 3>> points_from_array(const py::array_t<double>& arr) {
  if (arr.ndim() != 2 || arr.shape(1) != 3)
    throw py::value_error("embedded points must be an (n, 3) float64 array");
  std::vector<std::array<double, 3>> pts(std::size_t(arr.shape(0)));
  auto r = arr.unchecked<2>();
  for (py::ssize_t i = 0; i < arr.shape(0); ++i) pts[i] = {r(i, 0), r(i, 1), r(i, 2)};
  return pts;
}

}  // namespace

PYBIND11_MODULE(gust, m) {
  m.doc() = "Geometric manufacturing-uncertainty toolkit for 2D metamaterial unit cells";

  // geometry
  m.def(
      "to_sdf", [](const py::array_t<std::uint8_t>& cell) { return sdf_to_array(gust::to_sdf(cell_from_array(cell))); },
      py::arg("cell"), "Exact signed Euclidean distance transform (positive = material).");
  m.def(
      "to_binary",
      [](const py::array_t<double>& sdf, double threshold) {
        return cell_to_array(gust::to_binary(sdf_from_array(sdf), threshold));
      },
      py::arg("sdf"), py::arg("threshold") = 0.0);
  m.def(
      "dilate",
      [](const py::array_t<std::uint8_t>& cell, int size) {
        return cell_to_array(gust::dilate(cell_from_array(cell), {size}));
      },
      py::arg("cell"), py::arg("size"));
  m.def(
      "erode",
      [](const py::array_t<std::uint8_t>& cell, int size) {
        return cell_to_array(gust::erode(cell_from_array(cell), {size}));
      },
      py::arg("cell"), py::arg("size"));
  m.def(
      "volume_fraction",
      [](const py::array_t<std::uint8_t>& cell) { return gust::volume_fraction(cell_from_array(cell)); },
      py::arg("cell"));

  // perturbation
  m.def(
      "ffd_deform",
      [](const py::array_t<std::uint8_t>& cell, int m_pts, double sigma, std::uint64_t seed) {
        gust::RngStream rng(seed);
        return cell_to_array(gust::ffd_deform(cell_from_array(cell), {m_pts, sigma}, rng));
      },
      py::arg("cell"), py::arg("m") = 4, py::arg("sigma") = 3.0, py::arg("seed") = 0);
  m.def(
      "grf_perturb",
      [](const py::array_t<std::uint8_t>& cell, double ell1, double ell2, double sigma2,
         int modes, int grid, std::uint64_t seed) {
        gust::GRFConfig cfg{ell1, ell2, sigma2, modes, grid};
        gust::RngStream rng(seed);
        return cell_to_array(gust::grf_perturb(cell_from_array(cell), cfg, rng));
      },
      py::arg("cell"), py::arg("ell1") = 0.1, py::arg("ell2") = 0.1, py::arg("sigma2") = 1.5,
      py::arg("modes") = 32, py::arg("grid") = 16, py::arg("seed") = 0);

  // nominal designs
  m.def(
      "gen_nominals",
      [](int count, int resolution, const std::string& family, std::uint64_t seed) {
        auto cells =
            gust::gen_nominals(count, resolution, gust::family_from_string(family), seed);
        py::list out;
        for (const auto& cell : cells) out.append(cell_to_array(cell));
        return out;
      },
      py::arg("count"), py::arg("resolution"), py::arg("family") = "random-symmetric-levelset",
      py::arg("seed") = 0);

  // homogenization
  m.def(
      "homogenize",
      [](const py::array_t<std::uint8_t>& cell, double E, double nu, double void_ratio) {
        gust::ElasticTensor t =
            gust::homogenize(cell_from_array(cell), gust::Material{E, nu}, void_ratio);
        py::array_t<double> out({3, 3});
        auto w = out.mutable_unchecked<2>();
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) w(i, j) = t.C[i][j];
        return out;
      },
      py::arg("cell"), py::arg("E") = 1.0, py::arg("nu") = 0.3, py::arg("void_ratio") = 1e-9,
      "Effective plane-stress stiffness, Voigt order (11, 22, 12).");

  // metrics
  m.def(
      "density",
      [](const py::array_t<double>& real, const py::array_t<double>& gen, int k) {
        gust::EmbeddedSet re{points_from_array(real), gust::SourceTag::Real, 0};
        gust::EmbeddedSet ge{points_from_array(gen), gust::SourceTag::Generated, 0};
        return gust::density(re, ge, k);
      },
      py::arg("real"), py::arg("gen"), py::arg("k") = 5);
  m.def(
      "coverage",
      [](const py::array_t<double>& real, const py::array_t<double>& gen, int k) {
        gust::EmbeddedSet re{points_from_array(real), gust::SourceTag::Real, 0};
        gust::EmbeddedSet ge{points_from_array(gen), gust::SourceTag::Generated, 0};
        return gust::coverage(re, ge, k);
      },
      py::arg("real"), py::arg("gen"), py::arg("k") = 5);
  m.def("wasserstein1", &gust::wasserstein1, py::arg("a"), py::arg("b"));
  m.def(
      "kde_curve",
      [](const std::vector<double>& samples, double bandwidth) {
        gust::KdeCurve c = gust::kde_curve(samples, bandwidth);
        return py::make_tuple(c.grid, c.density, c.bandwidth);
      },
      py::arg("samples"), py::arg("bandwidth") = 0.0);
  m.def("welch_p_value", &gust::welch_p_value, py::arg("a"), py::arg("b"));

  // diffusion
  m.def(
      "make_schedule",
      [](int T, double beta_start, double beta_end) {
        gust::NoiseSchedule s = gust::make_schedule(T, beta_start, beta_end);
        py::dict out;
        out["betas"] = s.betas;
        out["alphas"] = s.alphas;
        out["alpha_bars"] = s.alpha_bars;
        return out;
      },
      py::arg("T") = 1000, py::arg("beta_start") = 1e-4, py::arg("beta_end") = 0.02);
  m.def(
      "forward_sample",
      [](const std::vector<double>& x0, int t, const std::vector<double>& eps, int T,
         double beta_start, double beta_end) {
        return gust::forward_sample(x0, t, eps, gust::make_schedule(T, beta_start, beta_end));
      },
      py::arg("x0"), py::arg("t"), py::arg("eps"), py::arg("T") = 1000,
      py::arg("beta_start") = 1e-4, py::arg("beta_end") = 0.02);
  m.def(
      "sample_checkpoint",
      [](const std::string& path, const py::array_t<std::uint8_t>& nominal, int count,
         std::uint64_t seed) {
        gust::Checkpoint ckpt = gust::read_checkpoint(path);
        auto cells = gust::sample_cells(ckpt, cell_from_array(nominal), count, seed);
        py::list out;
        for (const auto& cell : cells) out.append(cell_to_array(cell));
        return out;
      },
      py::arg("path"), py::arg("nominal"), py::arg("count") = 1, py::arg("seed") = 0,
      "Ancestral sampling from a saved checkpoint, conditioned on a nominal design.");

  // dataset files
  m.def(
      "load_dataset",
      [](const std::string& path) {
        gust::PairedDataset ds = gust::read_dataset(path);
        py::list ids, roles, cells;
        for (const auto& rec : ds.records) {
          ids.append(rec.nominal_id);
          roles.append(int(rec.role));
          cells.append(cell_to_array(rec.cell));
        }
        return py::make_tuple(ids, roles, cells);
      },
      py::arg("path"));
  m.def(
      "save_dataset",
      [](const std::string& path, const std::vector<std::uint32_t>& ids,
         const std::vector<int>& roles, const py::list& cells) {
        if (ids.size() != roles.size() || ids.size() != std::size_t(py::len(cells)))
          throw py::value_error("ids, roles and cells must have matching lengths");
        gust::PairedDataset ds;
        std::uint32_t max_variants = 0;
        std::vector<std::uint32_t> counts;
        for (std::size_t i = 0; i < ids.size(); ++i) {
          gust::DatasetRecord rec;
          rec.nominal_id = ids[i];
          rec.role = roles[i] ? gust::Role::Fabricated : gust::Role::Nominal;
          rec.cell = cell_from_array(cells[i].cast<py::array_t<std::uint8_t>>());
          if (rec.role == gust::Role::Fabricated) {
            if (rec.nominal_id >= counts.size()) counts.resize(rec.nominal_id + 1, 0);
            max_variants = std::max(max_variants, ++counts[rec.nominal_id]);
          }
          ds.records.push_back(std::move(rec));
        }
        ds.variants_per_nominal = max_variants;
        gust::write_dataset(ds, path);
      },
      py::arg("path"), py::arg("ids"), py::arg("roles"), py::arg("cells"));
}
