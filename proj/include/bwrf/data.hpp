#ifndef BWRF_DATA_HPP
#define BWRF_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "bwrf/tensor.hpp"

namespace bwrf {

/// Missing, truncated or malformed dataset files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-channel constants applied as (pixel/255 − mean) / std.
struct Normalization {
  std::vector<float> mean;
  std::vector<float> std;

  /// Published CIFAR-10 training-set statistics.
  static Normalization cifar10();
  /// Published MNIST statistics, for single-channel IDX data.
  static Normalization mnist();
};

float normalize_pixel(std::uint8_t pixel, float mean, float std);
std::uint8_t denormalize_pixel(float value, float mean, float std);

/// Images kept as raw CHW bytes; normalization happens when batches are made.
struct Dataset {
  int channels = 3;
  int height = 32;
  int width = 32;
  int classes = 10;
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;
  Normalization norm = Normalization::cifar10();

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return static_cast<std::size_t>(channels) * height * width; }
  std::span<const std::uint8_t> raw(std::size_t index) const;
  /// Normalized CHW floats of one image.
  std::vector<float> image(std::size_t index) const;
};

struct Splits {
  Dataset train;
  Dataset test;
};

struct Batch {
  Tensor images;  // N×C×H×W, normalized
  std::vector<int> labels;
};

/// Reads one CIFAR-10 binary batch file: records of 1 label byte followed by
/// 3072 pixel bytes in CHW order.
Dataset read_cifar10_file(const std::filesystem::path &path);
/// data_batch_1..5.bin → train, test_batch.bin → test.
Splits load_cifar10(const std::filesystem::path &dir);
void write_cifar10_file(const std::filesystem::path &path, const Dataset &data);
/// Writes `splits` as data_batch_1..5.bin and test_batch.bin.
void write_cifar10_dir(const std::filesystem::path &dir, const Splits &splits);

/// IDX pair: images (magic 0x00000803, N×H×W) and labels (magic 0x00000801).
Dataset read_idx(const std::filesystem::path &images, const std::filesystem::path &labels);
/// MNIST-style file names: train-images-idx3-ubyte, t10k-images-idx3-ubyte, ...
Splits load_idx(const std::filesystem::path &dir);
void write_idx(const std::filesystem::path &images, const std::filesystem::path &labels, const Dataset &data);

/// Random-crop offset into the zero-padded image plus a horizontal flip flag.
/// Offset (pad, pad) with no flip is the identity.
struct CropFlip {
  int dx = 4;
  int dy = 4;
  bool flip = false;
};

CropFlip sample_crop_flip(std::mt19937_64 &rng, int pad = 4, double flip_probability = 0.5);

/// Zero-pads a CHW image by `pad`, crops back to H×W at (dy, dx), then
/// optionally mirrors horizontally.
std::vector<std::uint8_t> augment(std::span<const std::uint8_t> image, int channels, int height, int width,
                                  const CropFlip &op, int pad = 4);

/// Class-stratified deterministic subsample: round(fraction·count) per class,
/// returned in original order. Throws when a class would end up empty.
Dataset subset(const Dataset &data, double fraction, std::uint64_t seed);

/// Normalized batch of the given records. With `augment_rng`, each image is
/// randomly cropped and flipped first.
Batch make_batch(const Dataset &data, std::span<const std::size_t> indices, std::mt19937_64 *augment_rng = nullptr);

/// Shuffled visiting order for one epoch.
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, int epoch);

/// Class-conditional synthetic images in CIFAR-10 geometry for smoke runs:
/// each class is a coloured oriented grating, samples add jitter and noise.
Splits make_synthetic_cifar(std::size_t train_per_class, std::size_t test_per_class, std::uint64_t seed,
                            int classes = 10);

}  // namespace bwrf

#endif  // BWRF_DATA_HPP
