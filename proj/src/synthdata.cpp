#include "scda/synthdata.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

#include "scda/rng.hpp"

namespace scda {

void SynthConfig::validate() const {
  if (classes < 2 || classes > 254) throw std::invalid_argument("synth: classes must be in [2, 254]");
  if (height == 0 || width == 0 || height % 2 || width % 2) {
    throw std::invalid_argument("synth: image extents must be positive and even");
  }
  if (glyph_size == 0 || glyph_size > height / 2 || glyph_size > width / 2) {
    throw std::invalid_argument("synth: glyph must fit inside a quadrant");
  }
  if (glyph_size * glyph_size < classes) throw std::invalid_argument("synth: glyph too small for class count");
  if (!(confound >= 0.0 && confound <= 1.0)) throw std::invalid_argument("synth: confound must be in [0, 1]");
  if (!(noise >= 0.0)) throw std::invalid_argument("synth: noise must be nonnegative");
}

bool Dataset::labeled() const {
  return std::none_of(labels.begin(), labels.end(), [](std::uint8_t l) { return l == kAbsentLabel; });
}

std::vector<std::uint8_t> glyph_pattern(const SynthConfig& config, std::size_t cls) {
  const std::size_t cells = config.glyph_size * config.glyph_size;
  std::vector<std::size_t> order(cells);
  std::iota(order.begin(), order.end(), 0);
  SplitMix64 rng(0x5CDA5CDAULL);  // independent of the dataset seed
  rng.shuffle(std::span<std::size_t>(order));
  const auto lit = static_cast<std::size_t>(
      std::lround(static_cast<double>(cells) * static_cast<double>(cls + 1) / static_cast<double>(config.classes + 1)));
  std::vector<std::uint8_t> pattern(cells, 0);
  for (std::size_t i = 0; i < std::max<std::size_t>(lit, 1); ++i) pattern[order[i]] = 1;
  return pattern;
}

Dataset generate(const SynthConfig& config, Split split, Domain domain) {
  config.validate();
  const std::size_t n = split == Split::train ? config.train_per_domain : config.eval_per_domain;
  const std::size_t h = config.height, w = config.width, hw = h * w;
  const std::size_t qh = h / 2, qw = w / 2, g = config.glyph_size;
  const std::uint64_t tag = (split == Split::train ? 0x10 : 0x20) | static_cast<std::uint64_t>(domain);
  SplitMix64 rng(derive_seed(config.seed, tag));

  std::vector<std::vector<std::uint8_t>> glyphs;
  for (std::size_t c = 0; c < config.classes; ++c) glyphs.push_back(glyph_pattern(config, c));

  // balanced labels in shuffled order
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % config.classes;
  rng.shuffle(std::span<std::size_t>(labels));

  Dataset ds;
  ds.classes = config.classes;
  ds.height = h;
  ds.width = w;
  ds.labels.resize(n);
  ds.domains.assign(n, domain);
  ds.pixels.assign(n * hw, 0.0f);
  ds.masks.assign(n * hw, 0);

  const bool keep_labels = domain == Domain::source || split == Split::eval;
  std::vector<double> img(hw);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = labels[i];
    const std::size_t quadrant = rng.below(4);
    const std::size_t oy = rng.below(qh - g + 1), ox = rng.below(qw - g + 1);
    std::size_t level = 0;
    if (domain == Domain::source && rng.uniform() < config.confound) {
      level = y;
    } else {
      level = rng.below(config.classes);
    }
    const std::size_t phase = rng.below(2);
    double stripe = config.stripe_base + config.stripe_step * static_cast<double>(level);
    if (domain == Domain::target && config.target_stripe_level >= 0.0) stripe = config.target_stripe_level;

    const std::size_t qy0 = (quadrant / 2) * qh, qx0 = (quadrant % 2) * qw;
    std::uint8_t* mask = ds.masks.data() + i * hw;
    for (std::size_t u = 0; u < h; ++u) {
      for (std::size_t v = 0; v < w; ++v) {
        const bool in_quadrant = u >= qy0 && u < qy0 + qh && v >= qx0 && v < qx0 + qw;
        mask[u * w + v] = in_quadrant ? 1 : 0;
        double val = 0.0;
        if (in_quadrant) {
          const std::size_t gu = u - qy0, gv = v - qx0;
          if (gu >= oy && gu < oy + g && gv >= ox && gv < ox + g && glyphs[y][(gu - oy) * g + (gv - ox)]) {
            val = config.glyph_value;
          }
        } else {
          const std::size_t coord = domain == Domain::source ? u : v;  // horizontal vs vertical
          if ((coord + phase) % 2 == 0) val = stripe;
        }
        img[u * w + v] = val;
      }
    }
    for (std::size_t p = 0; p < hw; ++p) {
      const double noisy = config.noise > 0.0 ? img[p] + config.noise * rng.normal() : img[p];
      ds.pixels[i * hw + p] = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
    }
    ds.labels[i] = keep_labels ? static_cast<std::uint8_t>(y) : kAbsentLabel;
  }
  return ds;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size < 2) throw std::invalid_argument("batch_size must be at least 2");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  SplitMix64 rng(derive_seed(seed, epoch + 1));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start + batch_size <= n; start += batch_size) {
    out.emplace_back(order.begin() + static_cast<long>(start),
                     order.begin() + static_cast<long>(start + batch_size));
  }
  return out;
}

LabeledBatch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  const std::size_t hw = data.pixels_per_image();
  LabeledBatch b;
  b.images = Tensor({indices.size(), 1, data.height, data.width});
  b.object_masks.resize(indices.size() * hw);
  b.domain = indices.empty() ? Domain::source : data.domains[indices[0]];
  std::vector<std::size_t> labels;
  bool labeled = true;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= data.size()) throw std::out_of_range("make_batch: sample " + std::to_string(i));
    for (std::size_t p = 0; p < hw; ++p) {
      b.images[k * hw + p] = static_cast<double>(data.pixels[i * hw + p]);
      b.object_masks[k * hw + p] = data.masks[i * hw + p];
    }
    if (data.labels[i] == kAbsentLabel) labeled = false;
    else labels.push_back(data.labels[i]);
  }
  if (labeled) b.labels = std::move(labels);
  return b;
}

std::vector<LabeledBatch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed,
                                  std::uint64_t epoch) {
  std::vector<LabeledBatch> out;
  for (const auto& idx : batch_indices(data.size(), batch_size, seed, epoch)) out.push_back(make_batch(data, idx));
  return out;
}

LabeledBatch as_batch(const Dataset& data) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  return make_batch(data, all);
}

// ---- binary IO ------------------------------------------------------------

namespace {
constexpr std::array<char, 4> kMagic{'S', 'C', 'D', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                         static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("dataset: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > UINT32_MAX) throw std::runtime_error(std::string("dataset: ") + what + " exceeds u32");
  return static_cast<std::uint32_t>(v);
}
}  // namespace

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset " + path.string());
  out.write(kMagic.data(), 4);
  put_u32(out, checked_u32(data.size(), "n"));
  put_u32(out, checked_u32(data.classes, "C"));
  put_u32(out, checked_u32(data.height, "H"));
  put_u32(out, checked_u32(data.width, "W"));
  const std::size_t hw = data.pixels_per_image();
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.put(static_cast<char>(data.labels[i]));
    out.put(static_cast<char>(data.domains[i]));
    for (std::size_t p = 0; p < hw; ++p) put_u32(out, std::bit_cast<std::uint32_t>(data.pixels[i * hw + p]));
    out.write(reinterpret_cast<const char*>(data.masks.data() + i * hw), static_cast<std::streamsize>(hw));
  }
  if (!out) throw std::runtime_error("failed writing dataset " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read dataset " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kMagic) {
    throw std::runtime_error("dataset " + path.string() + ": bad magic (expected SCD1)");
  }
  Dataset ds;
  const std::size_t n = get_u32(in);
  ds.classes = get_u32(in);
  ds.height = get_u32(in);
  ds.width = get_u32(in);
  const std::size_t hw = ds.height * ds.width;
  ds.labels.resize(n);
  ds.domains.resize(n);
  ds.pixels.resize(n * hw);
  ds.masks.resize(n * hw);
  for (std::size_t i = 0; i < n; ++i) {
    char head[2];
    if (!in.read(head, 2)) throw std::runtime_error("dataset " + path.string() + ": truncated sample");
    ds.labels[i] = static_cast<std::uint8_t>(head[0]);
    const auto dom = static_cast<std::uint8_t>(head[1]);
    if (dom > 1) throw std::runtime_error("dataset " + path.string() + ": bad domain tag");
    ds.domains[i] = static_cast<Domain>(dom);
    for (std::size_t p = 0; p < hw; ++p) ds.pixels[i * hw + p] = std::bit_cast<float>(get_u32(in));
    if (!in.read(reinterpret_cast<char*>(ds.masks.data() + i * hw), static_cast<std::streamsize>(hw))) {
      throw std::runtime_error("dataset " + path.string() + ": truncated mask");
    }
  }
  return ds;
}

}  // namespace scda
