#include "gust/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gust {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);  // little-endian host
  out.append(b, 4);
}

void put_f32(std::string& out, float v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size()) throw FormatError(std::string("truncated file reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  float f32(const char* what) {
    need(4, what);
    float v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return std::uint8_t(buf[pos++]);
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void dump(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  out.write(content.data(), std::streamsize(content.size()));
  if (!out) throw FormatError("short write to " + path);
}

std::string format_g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void write_dataset(const PairedDataset& ds, const std::string& path) {
  validate_dataset(ds);
  const int h = ds.records.front().cell.height, w = ds.records.front().cell.width;
  std::string out;
  out.reserve(17 + ds.records.size() * (5 + std::size_t(h) * w));
  out += "GUST";
  put_u32(out, 1);
  put_u32(out, std::uint32_t(ds.records.size()));
  put_u32(out, std::uint32_t(h));
  put_u32(out, std::uint32_t(w));
  for (const auto& rec : ds.records) {
    put_u32(out, rec.nominal_id);
    out.push_back(char(rec.role == Role::Fabricated ? 1 : 0));
    out.append(reinterpret_cast<const char*>(rec.cell.values.data()), rec.cell.values.size());
  }
  dump(path, out);
}

PairedDataset read_dataset(const std::string& path) {
  std::string buf = slurp(path);
  Reader r{buf};
  if (r.bytes(4, "magic") != "GUST") throw FormatError(path + ": bad dataset magic");
  if (r.u32("version") != 1) throw FormatError(path + ": unsupported dataset version");
  std::uint32_t count = r.u32("record count");
  std::uint32_t h = r.u32("height"), w = r.u32("width");
  if (h < 4 || w < 4 || h > 1 << 16 || w > 1 << 16)
    throw FormatError(path + ": implausible dimensions");
  PairedDataset ds;
  ds.records.resize(count);
  for (auto& rec : ds.records) {
    rec.nominal_id = r.u32("nominal id");
    std::uint8_t role = r.u8("role");
    if (role > 1) throw FormatError(path + ": bad role byte");
    rec.role = role ? Role::Fabricated : Role::Nominal;
    rec.cell.height = int(h);
    rec.cell.width = int(w);
    std::string raw = r.bytes(std::size_t(h) * w, "cell values");
    rec.cell.values.assign(raw.begin(), raw.end());
    for (auto v : rec.cell.values)
      if (v > 1) throw FormatError(path + ": cell byte outside {0,1}");
  }
  if (r.pos != buf.size()) throw FormatError(path + ": trailing bytes");
  std::uint32_t max_variants = 0;
  std::vector<std::uint32_t> fab_counts;
  for (const auto& rec : ds.records)
    if (rec.role == Role::Fabricated) {
      if (rec.nominal_id >= fab_counts.size()) fab_counts.resize(rec.nominal_id + 1, 0);
      max_variants = std::max(max_variants, ++fab_counts[rec.nominal_id]);
    }
  ds.variants_per_nominal = max_variants;
  validate_dataset(ds);
  return ds;
}

void write_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string out;
  out += "GCKP";
  put_u32(out, 1);
  put_u32(out, std::uint32_t(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    put_u32(out, std::uint32_t(t.name.size()));
    out += t.name;
    put_u32(out, std::uint32_t(t.shape.size()));
    std::size_t n = 1;
    for (int d : t.shape) {
      put_u32(out, std::uint32_t(d));
      n *= std::size_t(d);
    }
    if (n != t.values.size()) throw FormatError("tensor " + t.name + ": shape/value mismatch");
    for (double v : t.values) put_f32(out, float(v));
  }
  nlohmann::json meta = ckpt.metadata;
  meta["schedule"] = {{"T", ckpt.schedule.T},
                      {"beta_start", ckpt.schedule.beta_start},
                      {"beta_end", ckpt.schedule.beta_end},
                      {"kind", "linear"}};
  meta["denoiser"] = denoiser_config_to_json(ckpt.config);
  std::string blob = meta.dump();
  put_u32(out, std::uint32_t(blob.size()));
  out += blob;
  dump(path, out);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::string buf = slurp(path);
  Reader r{buf};
  if (r.bytes(4, "magic") != "GCKP") throw FormatError(path + ": bad checkpoint magic");
  if (r.u32("version") != 1) throw FormatError(path + ": unsupported checkpoint version");
  std::uint32_t count = r.u32("tensor count");
  Checkpoint ckpt;
  ckpt.tensors.resize(count);
  for (auto& t : ckpt.tensors) {
    std::uint32_t name_len = r.u32("name length");
    t.name = r.bytes(name_len, "tensor name");
    std::uint32_t rank = r.u32("rank");
    if (rank > 8) throw FormatError(path + ": implausible tensor rank");
    t.shape.resize(rank);
    std::size_t n = 1;
    for (auto& d : t.shape) {
      d = int(r.u32("dim"));
      n *= std::size_t(d);
    }
    t.values.resize(n);
    for (auto& v : t.values) v = double(r.f32("tensor values"));
  }
  std::uint32_t blob_len = r.u32("metadata length");
  std::string blob = r.bytes(blob_len, "metadata");
  if (r.pos != buf.size()) throw FormatError(path + ": trailing bytes");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(blob);
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(path + ": bad metadata json: " + ex.what());
  }
  if (!meta.contains("schedule") || !meta.contains("denoiser"))
    throw FormatError(path + ": metadata missing schedule/denoiser");
  ckpt.schedule.T = meta["schedule"].at("T").get<int>();
  ckpt.schedule.beta_start = meta["schedule"].at("beta_start").get<double>();
  ckpt.schedule.beta_end = meta["schedule"].at("beta_end").get<double>();
  ckpt.config = denoiser_config_from_json(meta["denoiser"]);
  meta.erase("schedule");
  meta.erase("denoiser");
  ckpt.metadata = meta;
  return ckpt;
}

GrayImage read_pgm(const std::string& path) {
  std::string buf;
  try {
    buf = slurp(path);
  } catch (const FormatError& ex) {
    throw UnreadableImage(ex.what());
  }
  std::size_t pos = 0;
  auto token = [&]() -> std::string {
    while (pos < buf.size()) {
      if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
        ++pos;
      } else if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    std::size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (start == pos) throw UnreadableImage(path + ": truncated header");
    return buf.substr(start, pos - start);
  };
  std::string magic = token();
  if (magic != "P5" && magic != "P2") throw UnreadableImage(path + ": not an 8-bit PGM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw UnreadableImage(path + ": bad header numbers");
  }
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255)
    throw UnreadableImage(path + ": unsupported dimensions or depth");
  GrayImage img;
  img.height = h;
  img.width = w;
  img.pixels.resize(std::size_t(h) * w);
  if (magic == "P5") {
    ++pos;  // single whitespace after maxval
    if (pos + img.pixels.size() > buf.size()) throw UnreadableImage(path + ": truncated pixels");
    std::memcpy(img.pixels.data(), buf.data() + pos, img.pixels.size());
  } else {
    for (auto& p : img.pixels) {
      int v = 0;
      try {
        v = std::stoi(token());
      } catch (const std::exception&) {
        throw UnreadableImage(path + ": truncated ascii pixels");
      }
      if (v < 0 || v > maxval) throw UnreadableImage(path + ": pixel out of range");
      p = std::uint8_t(v);
    }
  }
  return img;
}

void write_pgm(const GrayImage& img, const std::string& path) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                    "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  dump(path, out);
}

void write_text_file(const std::string& path, const std::string& content) { dump(path, content); }

std::string read_text_file(const std::string& path) { return slurp(path); }

void write_property_csv(const std::vector<PropertyRow>& rows, const std::string& path) {
  std::string out = "id,C11,C12,C22,C33,vf,status\n";
  for (const auto& r : rows) {
    out += std::to_string(r.id) + ",";
    if (r.failed) {
      out += ",,,,," + std::string("failed:") + r.error + "\n";
    } else {
      out += format_g9(r.tensor.c11()) + "," + format_g9(r.tensor.c12()) + "," +
             format_g9(r.tensor.c22()) + "," + format_g9(r.tensor.c33()) + "," +
             format_g9(r.vf) + ",ok\n";
    }
  }
  dump(path, out);
}

std::vector<PropertyRow> read_property_csv(const std::string& path) {
  std::istringstream in(slurp(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("id,", 0) != 0)
    throw FormatError(path + ": missing property csv header");
  std::vector<PropertyRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (int k = 0; k < 6; ++k) {
      std::size_t comma = line.find(',', start);
      if (comma == std::string::npos) throw FormatError(path + ": short row");
      fields.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    fields.push_back(line.substr(start));
    PropertyRow row;
    row.id = std::size_t(std::stoull(fields[0]));
    if (fields[6].rfind("failed:", 0) == 0) {
      row.failed = true;
      row.error = fields[6].substr(7);
    } else {
      row.tensor.C[0][0] = std::stod(fields[1]);
      row.tensor.C[0][1] = row.tensor.C[1][0] = std::stod(fields[2]);
      row.tensor.C[1][1] = std::stod(fields[3]);
      row.tensor.C[2][2] = std::stod(fields[4]);
      row.vf = std::stod(fields[5]);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string svg_line_plot(const std::string& title, const std::vector<PlotSeries>& series,
                          int width, int height) {
  const double ml = 60, mr = 20, mt = 36, mb = 42;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (!(xmax > xmin)) xmax = xmin + 1.0;
  if (!(ymax > ymin)) ymax = ymin + 1.0;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr); };
  auto py = [&](double y) { return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << title << "</text>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
      << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
      << height - mb << "\" stroke=\"black\"/>\n";
  char lab[64];
  std::snprintf(lab, sizeof lab, "%.4g", xmin);
  svg << "<text x=\"" << ml << "\" y=\"" << height - mb + 16 << "\" font-size=\"11\">" << lab
      << "</text>\n";
  std::snprintf(lab, sizeof lab, "%.4g", xmax);
  svg << "<text x=\"" << width - mr << "\" y=\"" << height - mb + 16
      << "\" text-anchor=\"end\" font-size=\"11\">" << lab << "</text>\n";
  std::snprintf(lab, sizeof lab, "%.4g", ymax);
  svg << "<text x=\"" << ml - 6 << "\" y=\"" << mt + 4
      << "\" text-anchor=\"end\" font-size=\"11\">" << lab << "</text>\n";
  std::snprintf(lab, sizeof lab, "%.4g", ymin);
  svg << "<text x=\"" << ml - 6 << "\" y=\"" << height - mb
      << "\" text-anchor=\"end\" font-size=\"11\">" << lab << "</text>\n";

  int legend_y = int(mt) + 8;
  for (const auto& s : series) {
    svg << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      char pt[48];
      std::snprintf(pt, sizeof pt, "%.2f,%.2f ", px(s.x[i]), py(s.y[i]));
      svg << pt;
    }
    svg << "\"/>\n";
    svg << "<line x1=\"" << width - mr - 120 << "\" y1=\"" << legend_y << "\" x2=\""
        << width - mr - 96 << "\" y2=\"" << legend_y << "\" stroke=\"" << s.color
        << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << width - mr - 90 << "\" y=\"" << legend_y + 4
        << "\" font-size=\"11\">" << s.label << "</text>\n";
    legend_y += 16;
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace gust
