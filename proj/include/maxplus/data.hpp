#pragma once

// Datasets: IDX and CIFAR-10 binary loaders, a CSV seam for precomputed
// backbone features, and the synthetic max-affine tagging task.
//
// Features are stored samples x features; batches are handed out transposed
// (features x batch) to match the column-vector layout of the heads.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "maxplus/rng.hpp"
#include "maxplus/tensor.hpp"

namespace maxplus {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Task { kMultilabel, kMulticlass };

inline std::string to_string(Task t) { return t == Task::kMultilabel ? "multilabel" : "multiclass"; }

struct Splits {
  std::vector<std::size_t> train, val, test;
};

struct Dataset {
  std::string name;
  Task task = Task::kMultilabel;
  Tensor features;           // n x d
  Tensor targets;            // n x tags (multilabel only)
  std::vector<int> labels;   // n (multiclass only)
  std::size_t num_classes = 0;
  Splits splits;
  std::uint64_t seed = 0;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  /// Head output width: tag count or class count.
  std::size_t outputs() const { return task == Task::kMultilabel ? targets.cols() : num_classes; }

  Tensor batch_features(std::span<const std::size_t> idx) const {
    Tensor out = Tensor::matrix(dim(), idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto row = features.row(idx[j]);
      for (std::size_t f = 0; f < row.size(); ++f) out(f, j) = row[f];
    }
    return out;
  }
  Tensor batch_targets(std::span<const std::size_t> idx) const {
    Tensor out = Tensor::matrix(targets.cols(), idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto row = targets.row(idx[j]);
      for (std::size_t t = 0; t < row.size(); ++t) out(t, j) = row[t];
    }
    return out;
  }
  std::vector<int> batch_labels(std::span<const std::size_t> idx) const {
    std::vector<int> out(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) out[j] = labels[idx[j]];
    return out;
  }

  /// Throws ContractViolation if splits overlap or miss a sample, features are
  /// non-finite, or targets are malformed.
  void validate() const {
    const std::size_t n = size();
    std::vector<std::uint8_t> seen(n, 0);
    for (const auto* part : {&splits.train, &splits.val, &splits.test})
      for (auto i : *part) {
        if (i >= n) throw ContractViolation(name + ": split index " + std::to_string(i) + " out of range");
        if (seen[i]++) throw ContractViolation(name + ": sample " + std::to_string(i) + " appears in two splits");
      }
    if (std::find(seen.begin(), seen.end(), 0) != seen.end())
      throw ContractViolation(name + ": splits do not cover every sample");
    if (!features.all_finite()) throw ContractViolation(name + ": non-finite feature value");
    if (task == Task::kMultilabel) {
      if (targets.rows() != n) throw ContractViolation(name + ": target rows do not match samples");
      for (double t : targets.data())
        if (t != 0.0 && t != 1.0) throw ContractViolation(name + ": multilabel targets must be 0 or 1");
    } else {
      if (labels.size() != n) throw ContractViolation(name + ": label count does not match samples");
      for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= num_classes)
          throw ContractViolation(name + ": class label " + std::to_string(l) + " out of range");
    }
  }
};

/// Seeded permutation cut into train/val/test by fraction; the test part
/// takes the remainder.
inline Splits make_splits(std::size_t n, std::uint64_t seed, double train_frac, double val_frac) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed ^ 0x5157u);
  rng.shuffle(idx);
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n))));
  Splits s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
               idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  return s;
}

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset, const std::string& file) {
  if (offset + 4 > buf.size())
    throw ParseError(file + ": truncated at offset " + std::to_string(offset) + " (need 4 bytes, file has " +
                     std::to_string(buf.size()) + ")");
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// MNIST-style IDX pair (unsigned-byte images and labels). Pixels are scaled
/// to [0, 1]; splits are 80/10/10 under `seed`.
inline Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        std::uint64_t seed = 0) {
  const auto img = detail::read_file(images);
  const auto lab = detail::read_file(labels);
  const std::string iname = images.filename().string(), lname = labels.filename().string();

  const auto imagic = detail::read_be32(img, 0, iname);
  if (imagic != kIdxImageMagic) {
    char msg[128];
    std::snprintf(msg, sizeof msg, ": bad magic 0x%08x at offset 0 (expected 0x%08x)", imagic, kIdxImageMagic);
    throw ParseError(iname + msg);
  }
  const auto lmagic = detail::read_be32(lab, 0, lname);
  if (lmagic != kIdxLabelMagic) {
    char msg[128];
    std::snprintf(msg, sizeof msg, ": bad magic 0x%08x at offset 0 (expected 0x%08x)", lmagic, kIdxLabelMagic);
    throw ParseError(lname + msg);
  }
  const std::size_t n = detail::read_be32(img, 4, iname);
  const std::size_t rows = detail::read_be32(img, 8, iname);
  const std::size_t cols = detail::read_be32(img, 12, iname);
  const std::size_t nl = detail::read_be32(lab, 4, lname);
  if (n != nl) throw ParseError(iname + ": " + std::to_string(n) + " images but " + std::to_string(nl) + " labels");
  if (n == 0 || rows == 0 || cols == 0) throw ParseError(iname + ": empty image set");
  const std::size_t d = rows * cols;
  if (img.size() < 16 + n * d)
    throw ParseError(iname + ": truncated at offset " + std::to_string(img.size()) + " (expected " +
                     std::to_string(16 + n * d) + " bytes)");
  if (lab.size() < 8 + n)
    throw ParseError(lname + ": truncated at offset " + std::to_string(lab.size()) + " (expected " +
                     std::to_string(8 + n) + " bytes)");

  Dataset ds;
  ds.name = iname;
  ds.task = Task::kMulticlass;
  ds.seed = seed;
  ds.features = Tensor::matrix(n, d);
  for (std::size_t i = 0; i < n * d; ++i) ds.features[i] = img[16 + i] / 255.0;
  ds.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = std::max<std::size_t>(10, static_cast<std::size_t>(max_label) + 1);
  ds.splits = make_splits(n, seed, 0.8, 0.1);
  return ds;
}

/// Writes an IDX image/label pair; images are n x (rows*cols) bytes.
inline void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                      const std::vector<std::uint8_t>& pixels, const std::vector<std::uint8_t>& label_bytes,
                      std::uint32_t rows, std::uint32_t cols) {
  const auto n = static_cast<std::uint32_t>(label_bytes.size());
  if (pixels.size() != std::size_t{n} * rows * cols) throw ContractViolation("write_idx: pixel count mismatch");
  std::ofstream img(images, std::ios::binary), lab(labels, std::ios::binary);
  detail::write_be32(img, kIdxImageMagic);
  detail::write_be32(img, n);
  detail::write_be32(img, rows);
  detail::write_be32(img, cols);
  img.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  detail::write_be32(lab, kIdxLabelMagic);
  detail::write_be32(lab, n);
  lab.write(reinterpret_cast<const char*>(label_bytes.data()), static_cast<std::streamsize>(label_bytes.size()));
}

inline constexpr std::size_t kCifarPixels = 3072;
inline constexpr std::size_t kCifarRecord = 1 + kCifarPixels;

/// CIFAR-10 binary batches (1 label byte + 3072 channel-planar pixel bytes per
/// record). Training files get a seeded 80-20 train/validation split; records
/// from `test_files` form the test split. `grayscale` averages the channels.
inline Dataset load_cifar10_binary(const std::vector<std::filesystem::path>& train_files,
                                   const std::vector<std::filesystem::path>& test_files = {},
                                   std::uint64_t seed = 0, bool grayscale = false) {
  if (train_files.empty()) throw ParseError("cifar10: no training batch files given");
  std::vector<std::vector<std::uint8_t>> records;
  std::size_t n_train = 0;
  auto ingest = [&](const std::filesystem::path& p) {
    const auto buf = detail::read_file(p);
    if (buf.empty() || buf.size() % kCifarRecord != 0)
      throw ParseError(p.filename().string() + ": size " + std::to_string(buf.size()) +
                       " is not a positive multiple of the 3073-byte record");
    for (std::size_t off = 0; off < buf.size(); off += kCifarRecord) {
      if (buf[off] > 9) throw ParseError(p.filename().string() + ": label " + std::to_string(buf[off]) +
                                         " at offset " + std::to_string(off) + " outside 0..9");
      records.emplace_back(buf.begin() + static_cast<std::ptrdiff_t>(off),
                           buf.begin() + static_cast<std::ptrdiff_t>(off + kCifarRecord));
    }
  };
  for (const auto& p : train_files) ingest(p);
  n_train = records.size();
  for (const auto& p : test_files) ingest(p);

  const std::size_t n = records.size(), d = grayscale ? 1024 : kCifarPixels;
  Dataset ds;
  ds.name = "cifar10";
  ds.task = Task::kMulticlass;
  ds.num_classes = 10;
  ds.seed = seed;
  ds.features = Tensor::matrix(n, d);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = records[i];
    ds.labels[i] = r[0];
    if (grayscale) {
      for (std::size_t px = 0; px < 1024; ++px)
        ds.features(i, px) = (r[1 + px] + r[1 + 1024 + px] + r[1 + 2048 + px]) / (3.0 * 255.0);
    } else {
      for (std::size_t px = 0; px < kCifarPixels; ++px) ds.features(i, px) = r[1 + px] / 255.0;
    }
  }
  const Splits s = make_splits(n_train, seed, 0.8, 0.2);
  ds.splits.train = s.train;
  ds.splits.val = s.val;
  ds.splits.val.insert(ds.splits.val.end(), s.test.begin(), s.test.end());
  for (std::size_t i = n_train; i < n; ++i) ds.splits.test.push_back(i);
  return ds;
}

inline void write_cifar10_binary(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels,
                                 const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != labels.size() * kCifarPixels) throw ContractViolation("write_cifar10_binary: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out.put(static_cast<char>(labels[i]));
    out.write(reinterpret_cast<const char*>(pixels.data() + i * kCifarPixels), kCifarPixels);
  }
}

struct MaxAffineOptions {
  std::size_t n = 20000;
  std::size_t d = 64;
  std::size_t k_pieces = 4;
  std::size_t tags = 50;
  std::uint64_t seed = 0;
};

/// Multilabel task whose tags are thresholded max-affine functions:
///   tag_t(x) = [ max_j (a_tj · x + c_tj) > median over the sample ].
/// Inputs are standard normal; each tag is balanced by construction.
inline Dataset gen_max_affine(const MaxAffineOptions& o) {
  if (o.n < 2 || o.d == 0 || o.k_pieces == 0 || o.tags == 0)
    throw ContractViolation("gen_max_affine: n >= 2 and positive d, k_pieces, tags required");
  Rng rng(o.seed);
  Dataset ds;
  ds.name = "max-affine";
  ds.task = Task::kMultilabel;
  ds.seed = o.seed;
  ds.features = Tensor::matrix(o.n, o.d);
  for (auto& v : ds.features.storage()) v = rng.normal();
  ds.targets = Tensor::matrix(o.n, o.tags);

  const double scale = 1.0 / std::sqrt(static_cast<double>(o.d));
  std::vector<double> f(o.n), sorted;
  for (std::size_t t = 0; t < o.tags; ++t) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == 100) throw std::runtime_error("gen_max_affine: could not draw a non-constant tag");
      std::vector<double> a(o.k_pieces * o.d), c(o.k_pieces);
      for (auto& v : a) v = rng.normal() * scale;
      for (auto& v : c) v = rng.normal() * 0.5;
      for (std::size_t i = 0; i < o.n; ++i) {
        const auto x = ds.features.row(i);
        double best = -INFINITY;
        for (std::size_t j = 0; j < o.k_pieces; ++j) {
          double s = c[j];
          for (std::size_t q = 0; q < o.d; ++q) s += a[j * o.d + q] * x[q];
          best = std::max(best, s);
        }
        f[i] = best;
      }
      sorted = f;
      const auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(o.n / 2);
      std::nth_element(sorted.begin(), mid, sorted.end());
      double median = *mid;
      if (o.n % 2 == 0) median = 0.5 * (median + *std::max_element(sorted.begin(), mid));
      std::size_t ones = 0;
      for (std::size_t i = 0; i < o.n; ++i) {
        ds.targets(i, t) = f[i] > median ? 1.0 : 0.0;
        ones += f[i] > median;
      }
      if (ones > 0 && ones < o.n) break;
    }
  }
  ds.splits = make_splits(o.n, o.seed, 0.8, 0.1);
  return ds;
}

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    cells.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  for (auto& c : cells) {
    while (!c.empty() && (c.front() == ' ' || c.front() == '\t')) c.remove_prefix(1);
    while (!c.empty() && (c.back() == ' ' || c.back() == '\t' || c.back() == '\r')) c.remove_suffix(1);
  }
  return cells;
}

inline double parse_double(std::string_view cell, std::size_t line, std::size_t col) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v))
    throw ParseError("line " + std::to_string(line) + ", column " + std::to_string(col + 1) + ": non-numeric cell '" +
                     std::string(cell) + "'");
  return v;
}

}  // namespace detail

/// CSV with a header row. Columns named f<...> are features; t<...> columns
/// are binary tags (multilabel) or a single `label` column gives class
/// indices (multiclass). An optional `split` column (train/val/test) pins the
/// splits; otherwise they are drawn 80/10/10 under `seed`.
inline Dataset load_features_csv(const std::filesystem::path& path, std::uint64_t seed = 0) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw ParseError(path.string() + ": empty file");
  const auto names = detail::split_csv_line(header);
  std::vector<std::size_t> fcols, tcols;
  std::ptrdiff_t label_col = -1, split_col = -1;
  for (std::size_t c = 0; c < names.size(); ++c) {
    const auto nm = names[c];
    if (nm == "label") label_col = static_cast<std::ptrdiff_t>(c);
    else if (nm == "split") split_col = static_cast<std::ptrdiff_t>(c);
    else if (!nm.empty() && nm[0] == 'f') fcols.push_back(c);
    else if (!nm.empty() && nm[0] == 't') tcols.push_back(c);
    else throw ParseError(path.string() + ": unrecognized column '" + std::string(nm) + "'");
  }
  if (fcols.empty()) throw ParseError(path.string() + ": schema error: no feature (f*) columns");
  if (tcols.empty() && label_col < 0) throw ParseError(path.string() + ": schema error: missing target column (t* or label)");
  if (!tcols.empty() && label_col >= 0) throw ParseError(path.string() + ": schema error: both t* and label columns");

  std::vector<double> feats, targs;
  std::vector<int> labels;
  Splits splits;
  std::string line;
  std::size_t n = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != names.size())
      throw ParseError(path.string() + ": ragged row at line " + std::to_string(lineno) + " (" +
                       std::to_string(cells.size()) + " cells, header has " + std::to_string(names.size()) + ")");
    for (auto c : fcols) feats.push_back(detail::parse_double(cells[c], lineno, c));
    for (auto c : tcols) targs.push_back(detail::parse_double(cells[c], lineno, c));
    if (label_col >= 0) {
      const double l = detail::parse_double(cells[static_cast<std::size_t>(label_col)], lineno,
                                            static_cast<std::size_t>(label_col));
      if (l < 0 || l != std::floor(l)) throw ParseError("line " + std::to_string(lineno) + ": label must be a non-negative integer");
      labels.push_back(static_cast<int>(l));
    }
    if (split_col >= 0) {
      const auto s = cells[static_cast<std::size_t>(split_col)];
      if (s == "train") splits.train.push_back(n);
      else if (s == "val") splits.val.push_back(n);
      else if (s == "test") splits.test.push_back(n);
      else throw ParseError("line " + std::to_string(lineno) + ": split must be train, val or test");
    }
    ++n;
  }
  if (n == 0) throw ParseError(path.string() + ": no data rows");

  Dataset ds;
  ds.name = path.stem().string();
  ds.seed = seed;
  ds.features = Tensor::matrix(n, fcols.size(), std::move(feats));
  if (label_col >= 0) {
    ds.task = Task::kMulticlass;
    ds.labels = std::move(labels);
    ds.num_classes = static_cast<std::size_t>(*std::max_element(ds.labels.begin(), ds.labels.end())) + 1;
  } else {
    ds.task = Task::kMultilabel;
    ds.targets = Tensor::matrix(n, tcols.size(), std::move(targs));
  }
  ds.splits = split_col >= 0 ? splits : make_splits(n, seed, 0.8, 0.1);
  ds.validate();
  return ds;
}

/// Inverse of load_features_csv, including the split column. Values are
/// printed with 17 significant digits so they read back bit-identically.
inline void write_features_csv(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t f = 0; f < ds.dim(); ++f) out << (f ? "," : "") << 'f' << f;
  if (ds.task == Task::kMultilabel)
    for (std::size_t t = 0; t < ds.targets.cols(); ++t) out << ",t" << t;
  else
    out << ",label";
  out << ",split\n";
  std::vector<const char*> split_of(ds.size(), "train");
  for (auto i : ds.splits.val) split_of[i] = "val";
  for (auto i : ds.splits.test) split_of[i] = "test";
  char buf[32];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t f = 0; f < ds.dim(); ++f) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.features(i, f));
      out << (f ? "," : "") << buf;
    }
    if (ds.task == Task::kMultilabel)
      for (std::size_t t = 0; t < ds.targets.cols(); ++t) out << ',' << (ds.targets(i, t) != 0.0 ? 1 : 0);
    else
      out << ',' << ds.labels[i];
    out << ',' << split_of[i] << '\n';
  }
}

}  // namespace maxplus
