#include "jescore/data.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "jescore/errors.hpp"

namespace jescore::data {

using ordered_json = nlohmann::ordered_json;

void NoiseSchedule::validate() const {
  if (!(sigma_min > 0) || !(sigma_min <= sigma_max))
    throw ConfigError("noise schedule: need 0 < sigma_min <= sigma_max");
}

double NoiseSchedule::sample(double u) const {
  validate();
  if (u < 0.0 || u > 1.0) throw UsageError("noise schedule: u must be in [0,1]");
  const double r = std::sqrt(sigma_min) + u * (std::sqrt(sigma_max) - std::sqrt(sigma_min));
  return r * r;
}

void ImageBatch::validate(int num_classes) const {
  if (!images.defined() || images.rank() != 4) throw DataError("image batch: NCHW tensor required");
  if (static_cast<int64_t>(labels.size()) != images.dim(0))
    throw DataError("image batch: label count must match sample count");
  for (uint16_t c : labels)
    if (c < 1 || c > num_classes) throw DataError("image batch: label out of [1..C]");
  if (!images.all_finite()) throw DataError("image batch: pixels must be finite");
}

ImageBatch Dataset::select(const std::vector<int64_t>& indices) const {
  const Tensor& im = batch.images;
  const int64_t sample = im.numel() / im.dim(0);
  Tensor out = Tensor::zeros({static_cast<int64_t>(indices.size()), im.dim(1), im.dim(2),
                              im.dim(3)}, im.dtype());
  std::vector<uint16_t> labels(indices.size());
  const size_t row_bytes = static_cast<size_t>(sample) * dtype_size(im.dtype());
  for (size_t i = 0; i < indices.size(); ++i) {
    int64_t src = indices[i];
    if (src < 0 || src >= count()) throw UsageError("dataset select: index out of range");
    std::memcpy(static_cast<std::byte*>(out.raw()) + i * row_bytes,
                static_cast<const std::byte*>(im.raw()) + static_cast<size_t>(src) * row_bytes,
                row_bytes);
    labels[i] = batch.labels[static_cast<size_t>(src)];
  }
  return ImageBatch{std::move(out), std::move(labels)};
}

std::pair<Tensor, Tensor> add_noise(const Tensor& images, double sigma, Rng& rng) {
  if (sigma < 0) throw UsageError("add_noise: sigma must be >= 0");
  Tensor eps = Tensor::zeros(images.shape(), images.dtype());
  Tensor out = images.clone();
  for (int64_t i = 0; i < eps.numel(); ++i) {
    double e = rng.normal();
    eps.set(i, e);
    out.set(i, out.at(i) + sigma * e);
  }
  return {std::move(out), std::move(eps)};
}

std::pair<Tensor, Tensor> add_noise_per_sample(const Tensor& images,
                                               const std::vector<double>& sigma_per_sample,
                                               Rng& rng) {
  if (images.rank() < 1 || static_cast<int64_t>(sigma_per_sample.size()) != images.dim(0))
    throw UsageError("add_noise: one sigma per sample required");
  Tensor eps = Tensor::zeros(images.shape(), images.dtype());
  Tensor out = images.clone();
  const int64_t rows = images.dim(0);
  const int64_t rlen = images.numel() / rows;
  for (int64_t n = 0; n < rows; ++n) {
    const double sigma = sigma_per_sample[static_cast<size_t>(n)];
    if (sigma < 0) throw UsageError("add_noise: sigma must be >= 0");
    for (int64_t i = n * rlen; i < (n + 1) * rlen; ++i) {
      double e = rng.normal();
      eps.set(i, e);
      out.set(i, out.at(i) + sigma * e);
    }
  }
  return {std::move(out), std::move(eps)};
}

namespace {
void flip_one(const Tensor& src, Tensor& dst, int64_t n) {
  const int64_t c = src.dim(1), h = src.dim(2), w = src.dim(3);
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        int64_t base = ((n * c + ci) * h + y) * w;
        dst.set(base + x, src.at(base + (w - 1 - x)));
      }
}
}  // namespace

Tensor hflip_all(const Tensor& images) {
  Tensor out = Tensor::zeros(images.shape(), images.dtype());
  for (int64_t n = 0; n < images.dim(0); ++n) flip_one(images, out, n);
  return out;
}

Tensor random_hflip(const Tensor& images, Rng& rng) {
  Tensor out = images.clone();
  for (int64_t n = 0; n < images.dim(0); ++n)
    if (rng.coin()) flip_one(images, out, n);
  return out;
}

Tensor padded_crop_at(const Tensor& images, int64_t pad, int64_t off_h, int64_t off_w) {
  if (pad < 0) throw UsageError("crop: pad must be >= 0");
  if (off_h < 0 || off_h > 2 * pad || off_w < 0 || off_w > 2 * pad)
    throw UsageError("crop: offset out of range");
  const int64_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  Tensor out = Tensor::zeros(images.shape(), images.dtype());
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ci = 0; ci < c; ++ci)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          // Source coordinate in the padded frame; zeros outside.
          int64_t sy = y + off_h - pad, sx = x + off_w - pad;
          double v = (sy >= 0 && sy < h && sx >= 0 && sx < w)
                         ? images.at(((i * c + ci) * h + sy) * w + sx)
                         : 0.0;
          out.set(((i * c + ci) * h + y) * w + x, v);
        }
  return out;
}

Tensor padded_random_crop(const Tensor& images, int64_t pad, Rng& rng) {
  if (pad < 0) throw UsageError("crop: pad must be >= 0");
  if (pad == 0) return images.clone();
  const int64_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  Tensor out = Tensor::zeros(images.shape(), images.dtype());
  for (int64_t i = 0; i < n; ++i) {
    const int64_t off_h = static_cast<int64_t>(rng.below(static_cast<uint64_t>(2 * pad + 1)));
    const int64_t off_w = static_cast<int64_t>(rng.below(static_cast<uint64_t>(2 * pad + 1)));
    for (int64_t ci = 0; ci < c; ++ci)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          int64_t sy = y + off_h - pad, sx = x + off_w - pad;
          double v = (sy >= 0 && sy < h && sx >= 0 && sx < w)
                         ? images.at(((i * c + ci) * h + sy) * w + sx)
                         : 0.0;
          out.set(((i * c + ci) * h + y) * w + x, v);
        }
  }
  return out;
}

namespace {
void write_file(const std::filesystem::path& p, const void* data, size_t bytes) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + p.string());
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!f) throw DataError("write failed: " + p.string());
}

std::vector<std::byte> read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary | std::ios::ate);
  if (!f) throw DataError("cannot open: " + p.string());
  auto size = static_cast<size_t>(f.tellg());
  f.seekg(0);
  std::vector<std::byte> buf(size);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
  if (!f) throw DataError("read failed: " + p.string());
  return buf;
}
}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir, const std::string& stem,
                  bool pixels_u8) {
  ds.batch.validate(ds.num_classes);
  std::filesystem::create_directories(dir);
  const Tensor& im = ds.batch.images;

  const std::string images_file = stem + ".images.bin";
  const std::string labels_file = stem + ".labels.bin";

  if (pixels_u8) {
    std::vector<uint8_t> px(static_cast<size_t>(im.numel()));
    for (int64_t i = 0; i < im.numel(); ++i) {
      double v = im.at(i);
      if (v < 0 || v > 255 || v != std::floor(v))
        throw DataError("u8 dataset requires integral pixels in [0,255]");
      px[static_cast<size_t>(i)] = static_cast<uint8_t>(v);
    }
    write_file(dir / images_file, px.data(), px.size());
  } else {
    Tensor f32 = im.dtype() == DType::f32 ? im.clone() : im.astype(DType::f32);
    write_file(dir / images_file, f32.raw(), f32.nbytes());
  }
  write_file(dir / labels_file, ds.batch.labels.data(), ds.batch.labels.size() * sizeof(uint16_t));

  ordered_json manifest;
  manifest["format"] = "jescore-dataset";
  manifest["version"] = 1;
  manifest["count"] = im.dim(0);
  manifest["channels"] = im.dim(1);
  manifest["height"] = im.dim(2);
  manifest["width"] = im.dim(3);
  manifest["classes"] = ds.num_classes;
  manifest["pixel_dtype"] = pixels_u8 ? "u8" : "f32";
  manifest["images_file"] = images_file;
  manifest["labels_file"] = labels_file;
  std::string text = manifest.dump(2);
  text.push_back('\n');
  write_file(dir / (stem + ".manifest.json"), text.data(), text.size());
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw DataError("cannot open manifest: " + manifest_path.string());
  ordered_json manifest;
  try {
    f >> manifest;
  } catch (const std::exception& e) {
    throw DataError(std::string("manifest parse error: ") + e.what());
  }
  if (manifest.value("format", "") != "jescore-dataset" || manifest.value("version", 0) != 1)
    throw DataError("manifest: unsupported format or version");

  const int64_t n = manifest.at("count").get<int64_t>();
  const int64_t c = manifest.at("channels").get<int64_t>();
  const int64_t h = manifest.at("height").get<int64_t>();
  const int64_t w = manifest.at("width").get<int64_t>();
  const int classes = manifest.at("classes").get<int>();
  const std::string pixel_dtype = manifest.at("pixel_dtype").get<std::string>();
  const auto dir = manifest_path.parent_path();

  auto pixels = read_file(dir / manifest.at("images_file").get<std::string>());
  const size_t numel = static_cast<size_t>(n * c * h * w);
  Tensor images = Tensor::zeros({n, c, h, w}, DType::f32);
  if (pixel_dtype == "u8") {
    if (pixels.size() != numel) throw DataError("dataset: pixel blob size mismatch");
    for (size_t i = 0; i < numel; ++i)
      images.data<float>()[i] = static_cast<float>(static_cast<uint8_t>(pixels[i]));
  } else if (pixel_dtype == "f32") {
    if (pixels.size() != numel * 4) throw DataError("dataset: pixel blob size mismatch");
    std::memcpy(images.raw(), pixels.data(), pixels.size());
  } else {
    throw DataError("dataset: unknown pixel dtype " + pixel_dtype);
  }

  auto labels_raw = read_file(dir / manifest.at("labels_file").get<std::string>());
  if (labels_raw.size() != static_cast<size_t>(n) * sizeof(uint16_t))
    throw DataError("dataset: label blob size mismatch");
  std::vector<uint16_t> labels(static_cast<size_t>(n));
  std::memcpy(labels.data(), labels_raw.data(), labels_raw.size());

  Dataset ds{ImageBatch{std::move(images), std::move(labels)}, classes};
  ds.batch.validate(classes);
  return ds;
}

Dataset read_cifar10_binary(const std::filesystem::path& path) {
  constexpr int64_t kRecord = 3073;
  constexpr int64_t kPixels = 3072;
  auto raw = read_file(path);
  if (raw.empty() || raw.size() % kRecord != 0)
    throw DataError("cifar10: file size must be a positive multiple of 3073 bytes");
  const int64_t n = static_cast<int64_t>(raw.size()) / kRecord;
  Tensor images = Tensor::zeros({n, 3, 32, 32}, DType::f32);
  std::vector<uint16_t> labels(static_cast<size_t>(n));
  auto px = images.data<float>();
  for (int64_t i = 0; i < n; ++i) {
    const auto* rec = reinterpret_cast<const uint8_t*>(raw.data()) + i * kRecord;
    if (rec[0] > 9) throw DataError("cifar10: label byte out of [0,9]");
    labels[static_cast<size_t>(i)] = static_cast<uint16_t>(rec[0] + 1);
    for (int64_t j = 0; j < kPixels; ++j)
      px[static_cast<size_t>(i * kPixels + j)] = static_cast<float>(rec[1 + j]);
  }
  return Dataset{ImageBatch{std::move(images), std::move(labels)}, 10};
}

}  // namespace jescore::data
