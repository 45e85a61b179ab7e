#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "scda/tensor.hpp"

namespace scda {

/// Class activation maps of one image: maps[c][u][v] = sum_h w[c,h] a_h(u,v),
/// logits[c] = mean over (u,v) of maps[c].
struct CamResult {
  Tensor maps;  // [C x H x W]
  std::vector<double> logits;

  std::size_t classes() const { return maps.dim(0); }
  std::size_t height() const { return maps.dim(1); }
  std::size_t width() const { return maps.dim(2); }
};

struct ConcentrationScore {
  double ratio = 0.0;
  /// True when the map has no positive mass; ratio is then 0.
  bool degenerate = false;
};

/// activations [H_feat x H x W], weight [C x H_feat].
CamResult compute_cam(const Tensor& activations, const Tensor& weight);

/// Share of the positive part of map `cls` that falls inside `mask` (H*W
/// entries, nonzero = inside).
ConcentrationScore concentration(const CamResult& cam, std::size_t cls, std::span<const std::uint8_t> mask);

/// Nearest-neighbour block replication of an [H x W] map to [H' x W'];
/// H' and W' must be positive multiples of H and W.
Tensor upsample_nearest(const Tensor& map, std::size_t out_height, std::size_t out_width);

/// [H x W] map of class `cls`.
Tensor cam_slice(const CamResult& cam, std::size_t cls);

/// Binary 8-bit PGM (P5), min-max normalized to 0..255. A constant map is
/// written as all zeros.
void write_pgm(const Tensor& map, const std::filesystem::path& path);

}  // namespace scda
