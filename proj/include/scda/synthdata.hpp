#pragma once

// Two-domain synthetic benchmark.
//
// Each 16x16 grayscale image has a class glyph (a fixed binary 5x5 pattern,
// value 1.0) at a random offset inside one randomly chosen quadrant, and a
// stripe texture covering the other three quadrants. The stripe brightness is
// the nuisance: in the source domain (horizontal stripes) it equals the
// class's level with probability `confound` and is uniform otherwise; in the
// target domain (vertical stripes) it is uniform. Class glyphs differ in their
// number of lit cells, so the label is recoverable from the glyph alone even
// by a per-pixel feature extractor.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "scda/tensor.hpp"

namespace scda {

enum class Domain : std::uint8_t { source = 0, target = 1 };
enum class Split { train, eval };

inline constexpr std::uint8_t kAbsentLabel = 255;

struct SynthConfig {
  std::size_t classes = 4;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t glyph_size = 8;
  double glyph_value = 1.0;
  /// Stripe brightness of class k: stripe_base + k * stripe_step.
  double stripe_base = 0.25;
  double stripe_step = 0.1;
  /// Probability that a source image's stripe level is its class's level.
  double confound = 0.9;
  /// Stripe brightness of every target image; negative draws a class level
  /// uniformly instead.
  double target_stripe_level = 0.4;
  double noise = 0.1;
  std::size_t train_per_domain = 1024;
  std::size_t eval_per_domain = 400;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Dataset {
  std::size_t classes = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;   // kAbsentLabel when unlabeled
  std::vector<Domain> domains;
  std::vector<float> pixels;          // n * H * W
  std::vector<std::uint8_t> masks;    // n * H * W, 1 inside the glyph quadrant

  std::size_t size() const { return labels.size(); }
  std::size_t pixels_per_image() const { return height * width; }
  bool labeled() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct LabeledBatch {
  Tensor images;                                 // [n x 1 x H x W]
  std::optional<std::vector<std::size_t>> labels;
  Domain domain = Domain::source;
  std::vector<std::uint8_t> object_masks;        // n * H * W

  std::size_t size() const { return images.dim(0); }
};

/// The fixed glyph of class `cls` (glyph_size^2 cells, row-major, 0/1).
std::vector<std::uint8_t> glyph_pattern(const SynthConfig& config, std::size_t cls);

/// Deterministic in (config.seed, split, domain). Target training data is
/// written without labels; every other split/domain carries them.
Dataset generate(const SynthConfig& config, Split split, Domain domain);

/// Sample order for one epoch: Fisher-Yates on SplitMix64(derive_seed(seed,
/// epoch + 1)), cut into full batches; the trailing partial batch is dropped.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch);

LabeledBatch make_batch(const Dataset& data, std::span<const std::size_t> indices);
std::vector<LabeledBatch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed,
                                  std::uint64_t epoch);

/// Whole dataset as one batch (for evaluation).
LabeledBatch as_batch(const Dataset& data);

// 'SCD1' | u32 n | u32 C | u32 H | u32 W | n x (u8 label | u8 domain |
// H*W f32 pixels | H*W u8 mask), little-endian.
void write_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace scda
