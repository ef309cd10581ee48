#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gust/diffusion.hpp"
#include "gust/homogenize.hpp"
#include "gust/perturb.hpp"

namespace gust {

struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};
struct UnreadableImage : std::runtime_error {
  explicit UnreadableImage(const std::string& what) : std::runtime_error(what) {}
};
struct EmptyCell : std::runtime_error {
  explicit EmptyCell(const std::string& what) : std::runtime_error(what) {}
};

// Dataset file: magic "GUST", u32 version 1, u32 record count, u32 H, u32 W;
// per record u32 nominal_id, u8 role, H*W bytes row-major.
void write_dataset(const PairedDataset& ds, const std::string& path);
PairedDataset read_dataset(const std::string& path);

// Checkpoint file: magic "GCKP", u32 version 1, u32 tensor count; per tensor
// u32 name length, name, u32 rank, u32 dims..., f32 LE values row-major; then
// u32 metadata byte length and a UTF-8 JSON blob.
void write_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);

struct GrayImage {
  int height = 0, width = 0;
  std::vector<std::uint8_t> pixels;
};

GrayImage read_pgm(const std::string& path);       // P2 or P5, maxval <= 255
void write_pgm(const GrayImage& img, const std::string& path);  // P5

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// header id,C11,C12,C22,C33,vf; 9 significant digits; failed rows flagged
void write_property_csv(const std::vector<PropertyRow>& rows, const std::string& path);
std::vector<PropertyRow> read_property_csv(const std::string& path);

struct PlotSeries {
  std::string label;
  std::string color;
  std::vector<double> x, y;
};

// Hand-emitted polyline SVG with axes and a legend.
std::string svg_line_plot(const std::string& title, const std::vector<PlotSeries>& series,
                          int width = 640, int height = 420);

}  // namespace gust
