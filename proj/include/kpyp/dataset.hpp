#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

// Dataset ingestion and artifact output: comma-separated tabular files with
// selectable feature/location/label columns, and PGM/PPM images (ASCII and
// binary) for segmentation runs.

namespace kpyp {

struct TabularDataset {
  Eigen::MatrixXd features;   // N x F
  Eigen::MatrixXd locations;  // N x D
  std::optional<std::vector<int>> true_labels;

  int rows() const { return static_cast<int>(features.rows()); }
};

struct ImageDataset {
  int height = 0;
  int width = 0;
  int channels = 0;
  Eigen::MatrixXd features;   // (H*W) x F
  Eigen::MatrixXd locations;  // (H*W) x 2, (row/H, col/W)
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto begin = cell.find_first_not_of(" \t\r");
    const auto end = cell.find_last_not_of(" \t\r");
    out.push_back(begin == std::string::npos ? "" : cell.substr(begin, end - begin + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline double parse_cell(const std::string& cell, int row, int col) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error("parse error at row " + std::to_string(row + 1) + ", column " +
                             std::to_string(col + 1) + ": '" + cell + "' is not numeric");
  }
  if (pos != cell.size()) {
    throw std::runtime_error("parse error at row " + std::to_string(row + 1) + ", column " +
                             std::to_string(col + 1) + ": '" + cell + "' is not numeric");
  }
  return v;
}

}  // namespace detail

/// Loads a comma-separated file, selecting feature/location columns (0-based)
/// and an optional integer label column. Rows containing non-finite values
/// are an error, reported with their row numbers.
inline TabularDataset load_tabular(const std::string& path, const std::vector<int>& feature_cols,
                                   const std::vector<int>& location_cols,
                                   std::optional<int> label_col = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  if (feature_cols.empty() || location_cols.empty()) {
    throw std::invalid_argument("load_tabular: need at least one feature and one location column");
  }

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::vector<int> nonfinite_rows;
  std::string line;
  int row = 0;
  int max_col = 0;
  for (int c : feature_cols) max_col = std::max(max_col, c);
  for (int c : location_cols) max_col = std::max(max_col, c);
  if (label_col) max_col = std::max(max_col, *label_col);

  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') {
      ++row;
      continue;
    }
    const auto cells = detail::split_csv_line(line);
    if (static_cast<int>(cells.size()) <= max_col) {
      throw std::runtime_error("row " + std::to_string(row + 1) + " has " +
                               std::to_string(cells.size()) + " columns, need at least " +
                               std::to_string(max_col + 1));
    }
    std::vector<double> vals;
    vals.reserve(feature_cols.size() + location_cols.size());
    bool finite = true;
    for (int c : feature_cols) {
      const double v = detail::parse_cell(cells[c], row, c);
      finite = finite && std::isfinite(v);
      vals.push_back(v);
    }
    for (int c : location_cols) {
      const double v = detail::parse_cell(cells[c], row, c);
      finite = finite && std::isfinite(v);
      vals.push_back(v);
    }
    if (!finite) {
      nonfinite_rows.push_back(row + 1);
      ++row;
      continue;
    }
    rows.push_back(std::move(vals));
    if (label_col) {
      labels.push_back(static_cast<int>(detail::parse_cell(cells[*label_col], row, *label_col)));
    }
    ++row;
  }
  if (!nonfinite_rows.empty()) {
    std::string msg = "non-finite values in rows:";
    for (int r : nonfinite_rows) msg += " " + std::to_string(r);
    throw std::runtime_error(msg);
  }
  if (rows.empty()) throw std::runtime_error("'" + path + "' contains no data rows");

  TabularDataset ds;
  const int n = static_cast<int>(rows.size());
  const int f = static_cast<int>(feature_cols.size());
  const int d = static_cast<int>(location_cols.size());
  ds.features.resize(n, f);
  ds.locations.resize(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < f; ++j) ds.features(i, j) = rows[i][j];
    for (int j = 0; j < d; ++j) ds.locations(i, j) = rows[i][f + j];
  }
  if (label_col) ds.true_labels = std::move(labels);
  return ds;
}

enum class FeatureMode { Rgb, Gray };

namespace detail {

struct RawImage {
  int height = 0, width = 0, channels = 0, maxval = 255;
  std::vector<double> pixels;  // row-major, channel-interleaved, scaled to [0,1]
};

inline int next_pnm_token(std::istream& in) {
  // Skips whitespace and '#' comments, then reads one integer.
  while (true) {
    const int c = in.peek();
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v = 0;
  if (!(in >> v)) throw std::runtime_error("truncated image header");
  return v;
}

inline RawImage read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string magic;
  in >> magic;
  int channels = 0;
  bool binary = false;
  if (magic == "P2") channels = 1;
  else if (magic == "P5") { channels = 1; binary = true; }
  else if (magic == "P3") channels = 3;
  else if (magic == "P6") { channels = 3; binary = true; }
  else throw std::runtime_error("unsupported image magic '" + magic + "' (want P2/P3/P5/P6)");

  RawImage img;
  img.channels = channels;
  img.width = next_pnm_token(in);
  img.height = next_pnm_token(in);
  img.maxval = next_pnm_token(in);
  if (img.width < 1 || img.height < 1 || img.maxval < 1 || img.maxval > 65535) {
    throw std::runtime_error("invalid image dimensions or maxval");
  }
  const std::size_t count =
      static_cast<std::size_t>(img.width) * img.height * channels;
  img.pixels.resize(count);
  if (binary) {
    in.get();  // single whitespace after maxval
    const int bytes = img.maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(count * bytes);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
      throw std::runtime_error("truncated image payload");
    }
    for (std::size_t i = 0; i < count; ++i) {
      const int v = bytes == 1 ? buf[i] : (buf[2 * i] << 8) | buf[2 * i + 1];
      img.pixels[i] = static_cast<double>(v) / img.maxval;
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      int v = 0;
      if (!(in >> v)) throw std::runtime_error("truncated image payload");
      img.pixels[i] = static_cast<double>(v) / img.maxval;
    }
  }
  return img;
}

}  // namespace detail

/// Loads a PGM/PPM image as one observation per pixel: features are channel
/// intensities in [0,1] (optionally reduced to luminance), locations are
/// (row/H, col/W).
inline ImageDataset load_image(const std::string& path, FeatureMode mode = FeatureMode::Rgb) {
  const detail::RawImage img = detail::read_pnm(path);
  ImageDataset ds;
  ds.height = img.height;
  ds.width = img.width;

  const int n = img.height * img.width;
  const bool to_gray = mode == FeatureMode::Gray && img.channels == 3;
  ds.channels = to_gray ? 1 : img.channels;
  ds.features.resize(n, ds.channels);
  ds.locations.resize(n, 2);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const int i = r * img.width + c;
      if (to_gray) {
        const double* px = &img.pixels[static_cast<std::size_t>(i) * 3];
        ds.features(i, 0) = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
      } else {
        for (int ch = 0; ch < img.channels; ++ch) {
          ds.features(i, ch) = img.pixels[static_cast<std::size_t>(i) * img.channels + ch];
        }
      }
      ds.locations(i, 0) = static_cast<double>(r) / img.height;
      ds.locations(i, 1) = static_cast<double>(c) / img.width;
    }
  }
  return ds;
}

/// Appends 3x3 window mean and standard deviation per channel to the feature
/// matrix (edge pixels use the clamped window).
inline Eigen::MatrixXd append_window_stats(const ImageDataset& ds) {
  const int h = ds.height, w = ds.width, ch = ds.channels;
  Eigen::MatrixXd out(ds.features.rows(), ch * 3);
  out.leftCols(ch) = ds.features;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int i = r * w + c;
      for (int k = 0; k < ch; ++k) {
        double sum = 0.0, sum2 = 0.0;
        int cnt = 0;
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = std::clamp(r + dr, 0, h - 1);
            const int cc = std::clamp(c + dc, 0, w - 1);
            const double v = ds.features(rr * w + cc, k);
            sum += v;
            sum2 += v * v;
            ++cnt;
          }
        }
        const double mean = sum / cnt;
        out(i, ch + k) = mean;
        out(i, 2 * ch + k) = std::sqrt(std::max(0.0, sum2 / cnt - mean * mean));
      }
    }
  }
  return out;
}

/// One integer label per line.
inline void write_labels(const std::string& path, const std::vector<int>& labels) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  for (int v : labels) out << v << "\n";
}

inline std::vector<int> read_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<int> labels;
  int v = 0;
  while (in >> v) labels.push_back(v);
  if (labels.empty()) throw std::runtime_error("'" + path + "' contains no labels");
  return labels;
}

/// Writes a binary PPM where each cluster id maps to a distinct color.
inline void write_label_map_ppm(const std::string& path, const std::vector<int>& labels,
                                int height, int width) {
  if (static_cast<int>(labels.size()) != height * width) {
    throw std::invalid_argument("write_label_map_ppm: label count does not match image size");
  }
  const auto palette = [](int id) {
    // Golden-angle hue walk, full saturation/value.
    const double hue = std::fmod(0.618033988749895 * id, 1.0) * 6.0;
    const int i = static_cast<int>(hue);
    const double f = hue - i;
    const double q = 1.0 - f;
    double r = 0, g = 0, b = 0;
    switch (i % 6) {
      case 0: r = 1; g = f; b = 0; break;
      case 1: r = q; g = 1; b = 0; break;
      case 2: r = 0; g = 1; b = f; break;
      case 3: r = 0; g = q; b = 1; break;
      case 4: r = f; g = 0; b = 1; break;
      default: r = 1; g = 0; b = q; break;
    }
    return std::array<unsigned char, 3>{static_cast<unsigned char>(255 * r),
                                        static_cast<unsigned char>(255 * g),
                                        static_cast<unsigned char>(255 * b)};
  };
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "P6\n" << width << " " << height << "\n255\n";
  for (int v : labels) {
    const auto rgb = palette(v);
    out.write(reinterpret_cast<const char*>(rgb.data()), 3);
  }
}

}  // namespace kpyp
