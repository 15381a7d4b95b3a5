#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "jescore/rng.hpp"
#include "jescore/tensor.hpp"

namespace jescore::data {

/// Noise standard deviation law on the 0..255 pixel scale: the square of a
/// uniform draw on [sqrt(sigma_min), sqrt(sigma_max)], so sigma(u) is
/// monotone and maps [0,1] onto [sigma_min, sigma_max] exactly.
struct NoiseSchedule {
  double sigma_min = 1.0;
  double sigma_max = 100.0;

  void validate() const;
  double sample(double u) const;
  double draw(Rng& rng) const { return sample(rng.uniform01()); }
};

/// Labeled image batch: NCHW pixels on the 0..255 scale, labels in [1..C].
struct ImageBatch {
  Tensor images;
  std::vector<uint16_t> labels;

  int64_t count() const { return images.defined() ? images.dim(0) : 0; }
  void validate(int num_classes) const;
};

struct Dataset {
  ImageBatch batch;
  int num_classes = 0;

  int64_t count() const { return batch.count(); }
  ImageBatch select(const std::vector<int64_t>& indices) const;
};

/// y = x + sigma * eps with eps standard normal; eps is returned for use as
/// the regression target. No clipping.
std::pair<Tensor, Tensor> add_noise(const Tensor& images, double sigma, Rng& rng);
/// Per-sample sigma variant; sigma_per_sample has one entry per batch row.
std::pair<Tensor, Tensor> add_noise_per_sample(const Tensor& images,
                                               const std::vector<double>& sigma_per_sample,
                                               Rng& rng);

/// Horizontal flip of selected samples (one coin per sample drawn from rng).
Tensor random_hflip(const Tensor& images, Rng& rng);
Tensor hflip_all(const Tensor& images);
/// Zero-pad by `pad` on each side, then crop back to the original size at a
/// uniformly random offset per sample.
Tensor padded_random_crop(const Tensor& images, int64_t pad, Rng& rng);
/// Deterministic single-offset crop used by the random version and by tests.
Tensor padded_crop_at(const Tensor& images, int64_t pad, int64_t off_h, int64_t off_w);

// ---------------------------------------------------------------------------
// On-disk dataset: JSON manifest plus little-endian row-major NCHW pixel blob
// (u8 or f32) and u16 label blob.
// ---------------------------------------------------------------------------
void save_dataset(const Dataset& ds, const std::filesystem::path& dir, const std::string& stem,
                  bool pixels_u8 = false);
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// CIFAR-10 binary format: 3073-byte records, one label byte in [0,9]
/// followed by 3072 channel-major pixel bytes. Labels are shifted to [1..10].
Dataset read_cifar10_binary(const std::filesystem::path& path);

}  // namespace jescore::data
