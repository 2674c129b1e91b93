#pragma once

// Output artifacts: labelled CSV matrices, SVG heatmaps, JSON reports, and run
// manifests with SHA-256 digests. Every writer is byte-deterministic for a
// given input.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "ioi/error.hpp"
#include "ioi/linalg.hpp"

namespace ioi {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "0.3.0";
inline constexpr const char* kManifestName = "manifest.json";

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error(ErrorCategory::data, "io_error", message) {}
};

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v == 0.0 ? 0.0 : v);  // no "-0.00"
  std::string s(buf);
  if (s.find_first_not_of("-0.") == std::string::npos) s.erase(0, s.front() == '-' ? 1 : 0);
  return s;
}

inline std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Header row "label,<col labels>", then one row per matrix row.
inline std::string matrix_csv(const Matrix& m, const std::vector<std::string>& row_labels,
                              const std::vector<std::string>& col_labels, const std::string& corner = "") {
  if (row_labels.size() != m.rows() || col_labels.size() != m.cols())
    throw DimensionError("csv labels do not match matrix " + m.shape_string());
  std::string out = corner;
  for (const auto& c : col_labels) out += "," + c;
  out += "\n";
  for (std::size_t i = 0; i < m.rows(); ++i) {
    out += row_labels[i];
    for (std::size_t j = 0; j < m.cols(); ++j) out += "," + format_g17(m(i, j));
    out += "\n";
  }
  return out;
}

struct HeatmapStyle {
  int cell = 56;
  int font_size = 12;
  int title_font_size = 14;
  double char_width = 0.62;  // average glyph width as a fraction of font size
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string hex_color(int r, int g, int b) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

// White at zero, blending linearly to blue for positive and red for negative
// values, scaled by the largest magnitude in the matrix.
inline std::string cell_color(double v, double scale) {
  const double t = scale > 0.0 ? std::clamp(std::abs(v) / scale, 0.0, 1.0) : 0.0;
  const int fade = static_cast<int>(std::lround(255.0 * (1.0 - t)));
  return v >= 0.0 ? hex_color(fade, fade, 255) : hex_color(255, fade, fade);
}

}  // namespace detail

struct SvgLayout {
  int width = 0;
  int height = 0;
  int left = 0;  // x of first cell column
  int top = 0;   // y of first cell row
};

inline SvgLayout heatmap_layout(const Matrix& m, const std::vector<std::string>& row_labels,
                                const std::vector<std::string>& col_labels, const HeatmapStyle& st = {}) {
  std::size_t longest_row = 0, longest_col = 0;
  for (const auto& s : row_labels) longest_row = std::max(longest_row, s.size());
  for (const auto& s : col_labels) longest_col = std::max(longest_col, s.size());
  SvgLayout l;
  l.left = 16 + static_cast<int>(std::ceil(static_cast<double>(longest_row) * st.char_width * st.font_size));
  // Column labels are rotated -45 degrees, so they need about 0.71x their length vertically.
  l.top = 2 * st.title_font_size + 16 +
          static_cast<int>(std::ceil(0.71 * static_cast<double>(longest_col) * st.char_width * st.font_size)) +
          st.font_size;
  const int grid_w = st.cell * static_cast<int>(m.cols());
  const int grid_h = st.cell * static_cast<int>(m.rows());
  l.width = l.left + grid_w + 16;
  // Rotated column labels extend to the right of the last column.
  l.width = std::max(l.width, l.left + grid_w + static_cast<int>(std::ceil(0.71 * static_cast<double>(longest_col) *
                                                                            st.char_width * st.font_size)) + 8);
  l.height = l.top + grid_h + 16;
  return l;
}

inline std::string heatmap_svg(const Matrix& m, const std::vector<std::string>& row_labels,
                               const std::vector<std::string>& col_labels, const std::string& title,
                               const HeatmapStyle& st = {}) {
  if (row_labels.size() != m.rows() || col_labels.size() != m.cols())
    throw DimensionError("heatmap labels do not match matrix " + m.shape_string());
  SvgLayout l = heatmap_layout(m, row_labels, col_labels, st);
  double scale = 0.0;
  for (double v : m.data()) scale = std::max(scale, std::abs(v));
  const std::string legend = "scale: -" + format_fixed(scale, 2) + " (red) .. 0 (white) .. +" + format_fixed(scale, 2) + " (blue)";
  auto text_w = [&](std::size_t chars, int size) {
    return 16 + static_cast<int>(std::ceil(static_cast<double>(chars) * st.char_width * size));
  };
  l.width = std::max({l.width, text_w(title.size(), st.title_font_size), text_w(legend.size(), st.font_size)});

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << l.width << "\" height=\"" << l.height
     << "\" viewBox=\"0 0 " << l.width << " " << l.height << "\" font-family=\"monospace\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << l.width << "\" height=\"" << l.height << "\" fill=\"#ffffff\"/>\n";
  os << "<text x=\"8\" y=\"" << st.title_font_size + 6 << "\" font-size=\"" << st.title_font_size << "\">"
     << detail::xml_escape(title) << "</text>\n";
  os << "<text x=\"8\" y=\"" << 2 * st.title_font_size + 10 << "\" font-size=\"" << st.font_size
     << "\">" << legend << "</text>\n";
  for (std::size_t j = 0; j < m.cols(); ++j) {
    const int x = l.left + st.cell * static_cast<int>(j) + st.cell / 2;
    const int y = l.top - 6;
    os << "<text x=\"" << x << "\" y=\"" << y << "\" font-size=\"" << st.font_size
       << "\" transform=\"rotate(-45 " << x << " " << y << ")\">" << detail::xml_escape(col_labels[j])
       << "</text>\n";
  }
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const int y = l.top + st.cell * static_cast<int>(i);
    os << "<text x=\"8\" y=\"" << y + st.cell / 2 + st.font_size / 3 << "\" font-size=\"" << st.font_size << "\">"
       << detail::xml_escape(row_labels[i]) << "</text>\n";
    for (std::size_t j = 0; j < m.cols(); ++j) {
      const int x = l.left + st.cell * static_cast<int>(j);
      os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << st.cell << "\" height=\"" << st.cell
         << "\" fill=\"" << detail::cell_color(m(i, j), scale) << "\" stroke=\"#999999\"/>";
      os << "<text x=\"" << x + st.cell / 2 << "\" y=\"" << y + st.cell / 2 + st.font_size / 3
         << "\" font-size=\"" << st.font_size << "\" text-anchor=\"middle\">" << format_fixed(m(i, j), 2)
         << "</text>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

inline void emit_heatmap_svg(const Matrix& m, const std::vector<std::string>& row_labels,
                             const std::vector<std::string>& col_labels, const fs::path& path,
                             const std::string& title = "") {
  write_text_file(path, heatmap_svg(m, row_labels, col_labels, title));
}

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("SHA-256 digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

inline std::string file_digest(const fs::path& path) { return sha256_hex(read_text_file(path)); }

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Relative paths of every regular file under dir except the manifest, sorted.
inline std::vector<std::string> list_artifacts(const fs::path& dir) {
  std::vector<std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).generic_string();
    if (rel != kManifestName) out.push_back(rel);
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct ManifestInput {
  std::string command_line;
  nlohmann::json configs = nlohmann::json::object();
  std::vector<std::uint64_t> seeds;
  std::vector<fs::path> inputs;
  std::string started_at;
  nlohmann::json timings;  // wall-clock, not reproducible
};

// Writes <dir>/manifest.json listing every file currently in dir with its
// digest. Timestamps live only here, so artifact digests stay reproducible.
inline nlohmann::json write_manifest(const fs::path& dir, const ManifestInput& in) {
  nlohmann::json m;
  m["tool"] = "ioi-lab";
  m["tool_version"] = kToolVersion;
  m["command_line"] = in.command_line;
  m["configs"] = in.configs;
  m["seeds"] = in.seeds;
  nlohmann::json inputs = nlohmann::json::array();
  for (const auto& p : in.inputs)
    inputs.push_back({{"path", p.generic_string()}, {"sha256", fs::exists(p) ? file_digest(p) : std::string()}});
  m["inputs"] = inputs;
  nlohmann::json outputs = nlohmann::json::array();
  for (const auto& rel : list_artifacts(dir)) outputs.push_back({{"path", rel}, {"sha256", file_digest(dir / rel)}});
  m["outputs"] = outputs;
  if (!in.timings.is_null()) m["timings"] = in.timings;
  m["started_at"] = in.started_at.empty() ? utc_timestamp() : in.started_at;
  m["finished_at"] = utc_timestamp();
  write_text_file(dir / kManifestName, m.dump(2) + "\n");
  return m;
}

}  // namespace ioi
