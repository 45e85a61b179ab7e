#include "scda/cam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace scda {

CamResult compute_cam(const Tensor& activations, const Tensor& weight) {
  if (activations.rank() != 3 || weight.rank() != 2 || weight.dim(1) != activations.dim(0)) {
    throw ShapeError("compute_cam: activations " + shape_str(activations.shape()) + " vs weight " +
                     shape_str(weight.shape()));
  }
  const std::size_t feats = activations.dim(0), h = activations.dim(1), w = activations.dim(2);
  const std::size_t classes = weight.dim(0), positions = h * w;
  CamResult out;
  out.maps = Tensor({classes, h, w});
  out.logits.assign(classes, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t p = 0; p < positions; ++p) {
      double acc = 0.0;
      for (std::size_t f = 0; f < feats; ++f) acc += weight.at(c, f) * activations[f * positions + p];
      out.maps[c * positions + p] = acc;
    }
    double total = 0.0;
    for (std::size_t p = 0; p < positions; ++p) total += out.maps[c * positions + p];
    out.logits[c] = total / static_cast<double>(positions);
  }
  return out;
}

ConcentrationScore concentration(const CamResult& cam, std::size_t cls, std::span<const std::uint8_t> mask) {
  const std::size_t positions = cam.height() * cam.width();
  if (mask.size() != positions) {
    throw ShapeError("concentration: mask of " + std::to_string(mask.size()) + " entries for map " +
                     shape_str(cam.maps.shape()));
  }
  if (cls >= cam.classes()) throw std::out_of_range("concentration: class " + std::to_string(cls));
  double inside = 0.0, total = 0.0;
  for (std::size_t p = 0; p < positions; ++p) {
    const double v = std::max(cam.maps[cls * positions + p], 0.0);
    total += v;
    if (mask[p]) inside += v;
  }
  if (total <= 0.0) return {0.0, true};
  return {std::clamp(inside / total, 0.0, 1.0), false};
}

Tensor upsample_nearest(const Tensor& map, std::size_t out_height, std::size_t out_width) {
  if (map.rank() != 2) throw ShapeError("upsample_nearest: expected [H x W], got " + shape_str(map.shape()));
  const std::size_t h = map.dim(0), w = map.dim(1);
  if (h == 0 || w == 0 || out_height == 0 || out_width == 0 || out_height % h || out_width % w) {
    throw std::invalid_argument("upsample_nearest: " + shape_str(map.shape()) + " -> [" +
                                std::to_string(out_height) + "x" + std::to_string(out_width) +
                                "] is not an integer scale");
  }
  const std::size_t sy = out_height / h, sx = out_width / w;
  Tensor out({out_height, out_width});
  for (std::size_t u = 0; u < out_height; ++u)
    for (std::size_t v = 0; v < out_width; ++v) out.at(u, v) = map.at(u / sy, v / sx);
  return out;
}

Tensor cam_slice(const CamResult& cam, std::size_t cls) {
  const std::size_t positions = cam.height() * cam.width();
  auto first = cam.maps.values().begin() + static_cast<long>(cls * positions);
  return Tensor({cam.height(), cam.width()}, std::vector<double>(first, first + static_cast<long>(positions)));
}

void write_pgm(const Tensor& map, const std::filesystem::path& path) {
  if (map.rank() != 2) throw ShapeError("write_pgm: expected [H x W], got " + shape_str(map.shape()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const auto [lo_it, hi_it] = std::minmax_element(map.values().begin(), map.values().end());
  const double lo = *lo_it, range = *hi_it - *lo_it;
  out << "P5\n" << map.dim(1) << ' ' << map.dim(0) << "\n255\n";
  for (double v : map.values()) {
    const double scaled = range > 0.0 ? (v - lo) / range * 255.0 : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(scaled, 0.0, 255.0)))));
  }
}

}  // namespace scda
