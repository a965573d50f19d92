#ifndef IMA_DATA_HPP
#define IMA_DATA_HPP

#include "ima/core.hpp"

#include "json.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace ima {

enum class Split : std::uint8_t { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  return std::nullopt;
}

struct SplitSizes {
  std::size_t train = 20000;
  std::size_t val = 2000;
  std::size_t test = 2000;

  [[nodiscard]] std::size_t of(Split s) const { return s == Split::train ? train : s == Split::val ? val : test; }
  [[nodiscard]] std::size_t total() const { return train + val + test; }
};

// One split, materialized. Position within the split is the stable sample id.
struct Samples {
  Mat x;
  std::vector<int> y;

  [[nodiscard]] std::size_t size() const noexcept { return y.size(); }
};

struct Dataset {
  Mat x;  // feature_dim x n
  std::vector<int> y;
  std::vector<Split> split;
  int feature_dim = 0;
  int num_classes = 0;
  nlohmann::json provenance = nlohmann::json::object();

  [[nodiscard]] std::size_t size() const noexcept { return y.size(); }

  [[nodiscard]] std::size_t count(Split s) const {
    std::size_t n = 0;
    for (auto t : split) n += (t == s);
    return n;
  }

  [[nodiscard]] Samples samples(Split s) const {
    Samples out;
    out.x.resize(feature_dim, static_cast<Eigen::Index>(count(s)));
    Eigen::Index k = 0;
    for (std::size_t i = 0; i < size(); ++i) {
      if (split[i] != s) continue;
      out.x.col(k++) = x.col(static_cast<Eigen::Index>(i));
      out.y.push_back(y[i]);
    }
    return out;
  }

  void validate() const {
    if (size() == 0) throw DataError("empty dataset");
    if (x.cols() != static_cast<Eigen::Index>(size()) || split.size() != size() || x.rows() != feature_dim)
      throw ShapeError("dataset arrays disagree in size");
    for (int label : y)
      if (label < 0 || label >= num_classes) throw LabelError("label outside [0, num_classes)");
  }
};

// ---------------------------------------------------------------------------
// Generators. Every split draws from its own stream, so split sizes do not
// perturb each other.

// Noise-free point on the two interleaved arcs, t in [0, pi].
inline Vec moons_point(int label, double t) {
  Vec p(2);
  if (label == 0) {
    p << std::cos(t), std::sin(t);
  } else {
    p << 1.0 - std::cos(t), 1.0 - std::sin(t) - 0.5;
  }
  return p;
}

inline Dataset make_moons(const SplitSizes& sizes = {}, double noise_std = 0.05, std::uint64_t seed = 0) {
  if (!(noise_std >= 0.0)) throw ConfigError("moons noise_std must be >= 0");
  if (sizes.total() == 0) throw DataError("empty dataset requested");
  Dataset ds;
  ds.feature_dim = 2;
  ds.num_classes = 2;
  ds.x.resize(2, static_cast<Eigen::Index>(sizes.total()));
  Eigen::Index col = 0;
  for (Split s : {Split::train, Split::val, Split::test}) {
    auto rng = make_rng(seed, Stream::data, static_cast<std::uint64_t>(s));
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t i = 0; i < sizes.of(s); ++i) {
      const int label = static_cast<int>(i % 2);
      Vec p = moons_point(label, angle(rng));
      if (noise_std > 0.0) {
        p[0] += noise_std * gauss(rng);
        p[1] += noise_std * gauss(rng);
      }
      ds.x.col(col++) = p;
      ds.y.push_back(label);
      ds.split.push_back(s);
    }
  }
  ds.provenance = {{"generator", "moons"},
                   {"noise_std", noise_std},
                   {"seed", seed},
                   {"n_train", sizes.train},
                   {"n_val", sizes.val},
                   {"n_test", sizes.test}};
  return ds;
}

// Isotropic Gaussian clusters; class k is centred on centers[k]. Counts are per class.
inline Dataset make_blobs(const std::vector<Vec>& centers, double std_dev, const SplitSizes& per_class,
                          std::uint64_t seed = 0) {
  if (centers.size() < 2) throw ConfigError("blobs need at least two centers");
  if (!(std_dev >= 0.0)) throw ConfigError("blobs std must be >= 0");
  const auto dim = centers.front().size();
  for (const auto& c : centers)
    if (c.size() != dim || dim == 0) throw ConfigError("blob centers must share a positive dimension");
  if (per_class.total() == 0) throw DataError("empty dataset requested");

  bool coincident = false;
  for (std::size_t a = 0; a < centers.size(); ++a)
    for (std::size_t b = a + 1; b < centers.size(); ++b) coincident |= (centers[a] == centers[b]);

  const auto k = centers.size();
  Dataset ds;
  ds.feature_dim = static_cast<int>(dim);
  ds.num_classes = static_cast<int>(k);
  ds.x.resize(dim, static_cast<Eigen::Index>(per_class.total() * k));
  Eigen::Index col = 0;
  for (Split s : {Split::train, Split::val, Split::test}) {
    auto rng = make_rng(seed, Stream::data, static_cast<std::uint64_t>(s));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t i = 0; i < per_class.of(s) * k; ++i) {
      const auto label = static_cast<int>(i % k);
      Vec p = centers[static_cast<std::size_t>(label)];
      for (Eigen::Index d = 0; d < dim; ++d) p[d] += std_dev * gauss(rng);
      ds.x.col(col++) = p;
      ds.y.push_back(label);
      ds.split.push_back(s);
    }
  }
  nlohmann::json cj = nlohmann::json::array();
  for (const auto& c : centers) cj.push_back(std::vector<double>(c.data(), c.data() + c.size()));
  ds.provenance = {{"generator", "blobs"},     {"centers", cj},
                   {"std", std_dev},           {"seed", seed},
                   {"coincident_centers", coincident},
                   {"n_train_per_class", per_class.train},
                   {"n_val_per_class", per_class.val},
                   {"n_test_per_class", per_class.test}};
  return ds;
}

// Concentric 2-D rings; class k lies on radius radii[k] with radial noise.
inline Dataset make_rings(const std::vector<double>& radii, double noise_std, const SplitSizes& per_class,
                          std::uint64_t seed = 0) {
  if (radii.size() < 2) throw ConfigError("rings need at least two radii");
  if (!(noise_std >= 0.0)) throw ConfigError("rings noise_std must be >= 0");
  if (per_class.total() == 0) throw DataError("empty dataset requested");
  const auto k = radii.size();
  Dataset ds;
  ds.feature_dim = 2;
  ds.num_classes = static_cast<int>(k);
  ds.x.resize(2, static_cast<Eigen::Index>(per_class.total() * k));
  Eigen::Index col = 0;
  for (Split s : {Split::train, Split::val, Split::test}) {
    auto rng = make_rng(seed, Stream::data, static_cast<std::uint64_t>(s));
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t i = 0; i < per_class.of(s) * k; ++i) {
      const auto label = static_cast<int>(i % k);
      const double t = angle(rng);
      const double r = radii[static_cast<std::size_t>(label)] + noise_std * gauss(rng);
      ds.x.col(col++) = Eigen::Vector2d(r * std::cos(t), r * std::sin(t));
      ds.y.push_back(label);
      ds.split.push_back(s);
    }
  }
  ds.provenance = {{"generator", "rings"}, {"radii", radii}, {"noise_std", noise_std}, {"seed", seed},
                   {"n_train_per_class", per_class.train}, {"n_val_per_class", per_class.val},
                   {"n_test_per_class", per_class.test}};
  return ds;
}

// ---------------------------------------------------------------------------
// CSV: header "split,label,f1,...,fd", then one row per sample.

inline void write_csv(std::ostream& os, const Dataset& ds) {
  os << "split,label";
  for (int d = 1; d <= ds.feature_dim; ++d) os << ",f" << d;
  os << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    os << to_string(ds.split[i]) << ',' << ds.y[i];
    for (int d = 0; d < ds.feature_dim; ++d) os << ',' << format_double(ds.x(d, static_cast<Eigen::Index>(i)));
    os << '\n';
  }
}

// Labels must be below num_classes when it is given; otherwise it is max label + 1.
inline Dataset read_csv(std::istream& is, std::optional<int> num_classes = std::nullopt) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(is, line)) throw DataError("empty dataset: missing header");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 3 || header[0] != "split" || header[1] != "label")
    throw ParseError("header must be split,label,f1,...", lineno);
  const int dim = static_cast<int>(header.size()) - 2;

  std::vector<double> values;
  Dataset ds;
  ds.feature_dim = dim;
  int max_label = -1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> cells;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      cells.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (cells.size() != header.size())
      throw ParseError("row " + std::to_string(lineno - 1) + " has " + std::to_string(cells.size() - 2) +
                           " features, expected " + std::to_string(dim),
                       lineno);
    const auto s = parse_split(cells[0]);
    if (!s) throw ParseError("row " + std::to_string(lineno - 1) + ": unknown split '" + std::string(cells[0]) + "'", lineno);
    int label = 0;
    if (!parse_int(cells[1], label) || label < 0)
      throw ParseError("row " + std::to_string(lineno - 1) + ": bad label", lineno);
    if (num_classes && label >= *num_classes)
      throw ParseError("row " + std::to_string(lineno - 1) + ": label " + std::to_string(label) +
                           " >= num_classes " + std::to_string(*num_classes),
                       lineno);
    for (int d = 0; d < dim; ++d) {
      double v = 0;
      if (!parse_double(cells[static_cast<std::size_t>(d) + 2], v) || !std::isfinite(v))
        throw ParseError("row " + std::to_string(lineno - 1) + ": bad feature " + std::to_string(d + 1), lineno);
      values.push_back(v);
    }
    ds.split.push_back(*s);
    ds.y.push_back(label);
    max_label = std::max(max_label, label);
  }
  if (ds.y.empty()) throw DataError("empty dataset: no rows after header");
  ds.x = Eigen::Map<const Mat>(values.data(), dim, static_cast<Eigen::Index>(ds.y.size()));
  ds.num_classes = num_classes ? *num_classes : max_label + 1;
  ds.provenance = {{"generator", "csv"}};
  return ds;
}

inline void save_csv(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  write_csv(os, ds);
  if (!os) throw DataError("failed writing " + path.string());
}

inline std::filesystem::path meta_path(const std::filesystem::path& csv) {
  auto p = csv;
  p.replace_extension(".meta");
  return p;
}

inline void save_meta(const std::filesystem::path& path, const Dataset& ds) {
  nlohmann::json j = ds.provenance;
  j["feature_dim"] = ds.feature_dim;
  j["num_classes"] = ds.num_classes;
  j["counts"] = {{"train", ds.count(Split::train)}, {"val", ds.count(Split::val)}, {"test", ds.count(Split::test)}};
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

// Reads `path`; when the `.meta` sidecar exists its num_classes and provenance apply.
inline Dataset load_csv(const std::filesystem::path& path, std::optional<int> num_classes = std::nullopt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open dataset " + path.string());
  nlohmann::json meta;
  const auto mp = meta_path(path);
  if (std::filesystem::exists(mp)) {
    std::ifstream ms(mp);
    try {
      meta = nlohmann::json::parse(ms);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(mp.string() + ": " + e.what(), 0);
    }
    if (!num_classes && meta.contains("num_classes")) num_classes = meta["num_classes"].get<int>();
  }
  try {
    Dataset ds = read_csv(is, num_classes);
    if (meta.is_object()) {
      ds.provenance = meta;
      ds.provenance.erase("feature_dim");
      ds.provenance.erase("num_classes");
      ds.provenance.erase("counts");
    }
    return ds;
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.message(), e.line());
  }
}

}  // namespace ima

#endif  // IMA_DATA_HPP
