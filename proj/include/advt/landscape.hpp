#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "advt/attacks.hpp"
#include "advt/metrics_io.hpp"

namespace advt {

/// Loss over the plane x + a*r1 + b*r2, a and b on linspace(-1, 1, resolution).
/// values[i * resolution + j] holds coefficient a = coords[i], b = coords[j].
template <typename T>
struct LandscapeGrid {
  std::size_t resolution = 0;
  double epsilon = 0;
  std::vector<double> coords;
  std::vector<double> values;
  Tensor<T> r1, r2;

  double at(std::size_t i, std::size_t j) const { return values[i * resolution + j]; }
  double origin() const { return at(resolution / 2, resolution / 2); }
};

inline std::vector<double> grid_coords(std::size_t resolution) {
  std::vector<double> c(resolution);
  const std::size_t mid = resolution / 2;
  for (std::size_t i = 0; i < resolution; ++i) {
    // Symmetric and exactly zero at the centre.
    c[i] = mid == 0 ? 0.0 : (static_cast<double>(i) - static_cast<double>(mid)) / static_cast<double>(mid);
  }
  return c;
}

/// r1 = epsilon * sign(grad_x L) at the clean input; r2 has entries +-epsilon.
/// Points are not clipped to [0,1]; BN runs in eval mode.
template <typename T>
LandscapeGrid<T> export_landscape(const TargetNet<T>& net, const Batch<T>& batch, double epsilon,
                                  std::size_t resolution = 21, std::uint64_t seed = 0) {
  if (resolution == 0 || resolution % 2 == 0) {
    throw ConfigError("landscape: resolution must be odd, got " + std::to_string(resolution));
  }
  if (!(epsilon >= 0)) throw ConfigError("landscape: epsilon must be non-negative");
  const T eps = static_cast<T>(epsilon);
  LandscapeGrid<T> grid;
  grid.resolution = resolution;
  grid.epsilon = epsilon;
  grid.coords = grid_coords(resolution);

  const auto& x = batch.images;
  grid.r1 = sign_of(input_gradient(net, x, batch.labels, BatchNormMode::kEval, batch.index).grad);
  for (auto& v : grid.r1.data()) v *= eps;
  grid.r2 = Tensor<T>(x.shape());
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  for (auto& v : grid.r2.data()) v = coin(rng) ? eps : -eps;

  Tensor<T> point(x.shape());
  auto px = x.data();
  auto d1 = grid.r1.data();
  auto d2 = grid.r2.data();
  auto p = point.data();
  grid.values.reserve(resolution * resolution);
  for (double a : grid.coords) {
    for (double b : grid.coords) {
      const T ta = static_cast<T>(a), tb = static_cast<T>(b);
      for (std::size_t k = 0; k < p.size(); ++k) p[k] = px[k] + ta * d1[k] + tb * d2[k];
      const auto ev = evaluate_batch(net, point, batch.labels);
      double s = 0;
      for (double l : ev.losses) s += l;
      grid.values.push_back(s / static_cast<double>(ev.losses.size()));
    }
  }
  return grid;
}

/// Text grid: "resolution epsilon" then one line of values per a-coordinate.
template <typename T>
std::string format_landscape(const LandscapeGrid<T>& grid) {
  std::string out = std::to_string(grid.resolution) + ' ' + metrics::format_double(grid.epsilon) + '\n';
  for (std::size_t i = 0; i < grid.resolution; ++i) {
    for (std::size_t j = 0; j < grid.resolution; ++j) {
      if (j) out += ' ';
      out += metrics::format_double(grid.at(i, j));
    }
    out += '\n';
  }
  return out;
}

template <typename T>
void write_landscape(const std::string& path, const LandscapeGrid<T>& grid) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  f << format_landscape(grid);
}

/// Parses a grid file back into (resolution, epsilon, values).
inline LandscapeGrid<float> parse_landscape(const std::string& text) {
  std::istringstream in(text);
  LandscapeGrid<float> g;
  if (!(in >> g.resolution >> g.epsilon) || g.resolution == 0) throw FormatError("landscape: bad header");
  g.coords = grid_coords(g.resolution);
  std::string tok;
  while (in >> tok) {
    double v{};
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size()) throw FormatError("landscape: bad value '" + tok + "'");
    g.values.push_back(v);
  }
  if (g.values.size() != g.resolution * g.resolution) {
    throw FormatError("landscape: expected " + std::to_string(g.resolution * g.resolution) + " values, got " +
                      std::to_string(g.values.size()));
  }
  return g;
}

}  // namespace advt
