#ifndef IMA_CHECKPOINT_HPP
#define IMA_CHECKPOINT_HPP

#include "ima/nn.hpp"

#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace ima {

// Text checkpoint:
//   mf-ckpt v1 <num_layers> <num_classes> <seed>
//   one line per layer: "linear <in> <out>" | "leaky_relu <slope>" | "layer_norm <dim> <epsilon>"
//   one line per parameter block (weights, then biases, per linear layer), 17 significant digits

inline void write_checkpoint(std::ostream& os, const Model& model) {
  const auto& layers = model.layers();
  os << "mf-ckpt v1 " << layers.size() << ' ' << model.num_classes() << ' ' << model.seed() << '\n';
  for (const auto& l : layers) {
    switch (l.kind) {
      case LayerKind::linear: os << "linear " << l.in_dim << ' ' << l.out_dim << '\n'; break;
      case LayerKind::leaky_relu: os << "leaky_relu " << format_double(l.negative_slope) << '\n'; break;
      case LayerKind::layer_norm: os << "layer_norm " << l.in_dim << ' ' << format_double(l.epsilon) << '\n'; break;
    }
  }
  const Vec& p = model.params();
  for (auto [offset, len] : model.param_blocks()) {
    for (std::size_t i = 0; i < len; ++i) {
      if (i) os << ' ';
      os << format_double(p[static_cast<Eigen::Index>(offset + i)]);
    }
    os << '\n';
  }
}

inline Model read_checkpoint(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  auto next_line = [&]() -> std::istringstream {
    if (!std::getline(is, line)) throw ParseError("checkpoint truncated", lineno + 1);
    ++lineno;
    return std::istringstream(line);
  };

  auto header = next_line();
  std::string magic, version;
  std::size_t num_layers = 0;
  int num_classes = 0;
  std::uint64_t seed = 0;
  if (!(header >> magic >> version >> num_layers >> num_classes >> seed) || magic != "mf-ckpt" || version != "v1")
    throw ParseError("bad checkpoint header", lineno);

  std::vector<LayerSpec> layers;
  for (std::size_t k = 0; k < num_layers; ++k) {
    auto ls = next_line();
    std::string kind;
    ls >> kind;
    LayerSpec spec;
    std::string a, b;
    if (kind == "linear") {
      int in = 0, out = 0;
      if (!(ls >> in >> out)) throw ParseError("bad linear layer", lineno);
      spec = LayerSpec::linear(in, out);
    } else if (kind == "leaky_relu") {
      double slope = 0;
      if (!(ls >> a) || !parse_double(a, slope)) throw ParseError("bad leaky_relu layer", lineno);
      spec = LayerSpec::leaky_relu(slope);
    } else if (kind == "layer_norm") {
      int dim = 0;
      double eps = 0;
      if (!(ls >> dim >> b) || !parse_double(b, eps)) throw ParseError("bad layer_norm layer", lineno);
      spec = LayerSpec::layer_norm(dim, eps);
    } else {
      throw ParseError("unknown layer kind '" + kind + "'", lineno);
    }
    layers.push_back(spec);
  }

  // Constructing once validates the layer chain and gives the block layout.
  Model model = [&] {
    try {
      return Model(layers, num_classes, seed);
    } catch (const ShapeError& e) {
      throw ParseError(std::string("inconsistent layers: ") + e.what(), lineno);
    }
  }();
  Vec params(static_cast<Eigen::Index>(model.num_params()));
  for (auto [offset, len] : model.param_blocks()) {
    auto ls = next_line();
    std::string tok;
    std::size_t i = 0;
    while (ls >> tok) {
      double v = 0;
      if (i >= len || !parse_double(tok, v)) throw ParseError("bad parameter block", lineno);
      params[static_cast<Eigen::Index>(offset + i++)] = v;
    }
    if (i != len)
      throw ParseError("parameter block has " + std::to_string(i) + " values, expected " + std::to_string(len), lineno);
  }
  model.set_params(std::move(params));
  return model;
}

inline void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  write_checkpoint(os, model);
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  try {
    return read_checkpoint(is);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.message(), e.line());
  }
}

}  // namespace ima

#endif  // IMA_CHECKPOINT_HPP
