#include "bwrf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

namespace bwrf {

namespace fs = std::filesystem;

Normalization Normalization::cifar10() { return {{0.4914f, 0.4822f, 0.4465f}, {0.2470f, 0.2435f, 0.2616f}}; }

Normalization Normalization::mnist() { return {{0.1307f}, {0.3081f}}; }

float normalize_pixel(std::uint8_t pixel, float mean, float std) {
  return (static_cast<float>(pixel) / 255.0f - mean) / std;
}

std::uint8_t denormalize_pixel(float value, float mean, float std) {
  const float p = std::round((value * std + mean) * 255.0f);
  return static_cast<std::uint8_t>(std::clamp(p, 0.0f, 255.0f));
}

std::span<const std::uint8_t> Dataset::raw(std::size_t index) const {
  return std::span<const std::uint8_t>(pixels).subspan(index * image_size(), image_size());
}

std::vector<float> Dataset::image(std::size_t index) const {
  auto src = raw(index);
  std::vector<float> out(src.size());
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::size_t c = i / plane;
    out[i] = normalize_pixel(src[i], norm.mean[c], norm.std[c]);
  }
  return out;
}

namespace {

constexpr std::size_t kCifarImage = 3 * 32 * 32;
constexpr std::size_t kCifarRecord = 1 + kCifarImage;

std::vector<std::uint8_t> read_file(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset file " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const fs::path &path, const std::vector<std::uint8_t> &bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

void append(Dataset &dst, const Dataset &src) {
  dst.pixels.insert(dst.pixels.end(), src.pixels.begin(), src.pixels.end());
  dst.labels.insert(dst.labels.end(), src.labels.begin(), src.labels.end());
}

std::uint32_t read_be32(const std::vector<std::uint8_t> &bytes, std::size_t offset, const fs::path &path) {
  if (offset + 4 > bytes.size())
    throw DataError(path.string() + ": truncated header at byte offset " + std::to_string(offset));
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::vector<std::uint8_t> &bytes, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) bytes.push_back(static_cast<std::uint8_t>(v >> shift));
}

}  // namespace

Dataset read_cifar10_file(const fs::path &path) {
  const auto bytes = read_file(path);
  if (bytes.size() % kCifarRecord != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % kCifarRecord;
    throw DataError(path.string() + ": truncated record at byte offset " + std::to_string(offset) + " (file has " +
                    std::to_string(bytes.size()) + " bytes, records are " + std::to_string(kCifarRecord) + ")");
  }
  Dataset data;
  const std::size_t records = bytes.size() / kCifarRecord;
  data.labels.reserve(records);
  data.pixels.reserve(records * kCifarImage);
  for (std::size_t r = 0; r < records; ++r) {
    const std::size_t offset = r * kCifarRecord;
    if (bytes[offset] >= 10)
      throw DataError(path.string() + ": label " + std::to_string(bytes[offset]) + " out of range at byte offset " +
                      std::to_string(offset));
    data.labels.push_back(bytes[offset]);
    data.pixels.insert(data.pixels.end(), bytes.begin() + static_cast<std::ptrdiff_t>(offset + 1),
                       bytes.begin() + static_cast<std::ptrdiff_t>(offset + kCifarRecord));
  }
  return data;
}

Splits load_cifar10(const fs::path &dir) {
  Splits splits;
  for (int i = 1; i <= 5; ++i) append(splits.train, read_cifar10_file(dir / ("data_batch_" + std::to_string(i) + ".bin")));
  splits.test = read_cifar10_file(dir / "test_batch.bin");
  return splits;
}

void write_cifar10_file(const fs::path &path, const Dataset &data) {
  if (data.channels != 3 || data.height != 32 || data.width != 32)
    throw DataError("CIFAR-10 records must be 3×32×32");
  std::vector<std::uint8_t> bytes;
  bytes.reserve(data.size() * kCifarRecord);
  for (std::size_t i = 0; i < data.size(); ++i) {
    bytes.push_back(static_cast<std::uint8_t>(data.labels[i]));
    auto img = data.raw(i);
    bytes.insert(bytes.end(), img.begin(), img.end());
  }
  write_file(path, bytes);
}

void write_cifar10_dir(const fs::path &dir, const Splits &splits) {
  fs::create_directories(dir);
  const std::size_t n = splits.train.size();
  for (std::size_t part = 0; part < 5; ++part) {
    Dataset chunk;
    const std::size_t begin = n * part / 5, end = n * (part + 1) / 5;
    chunk.labels.assign(splits.train.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                        splits.train.labels.begin() + static_cast<std::ptrdiff_t>(end));
    chunk.pixels.assign(splits.train.pixels.begin() + static_cast<std::ptrdiff_t>(begin * kCifarImage),
                        splits.train.pixels.begin() + static_cast<std::ptrdiff_t>(end * kCifarImage));
    write_cifar10_file(dir / ("data_batch_" + std::to_string(part + 1) + ".bin"), chunk);
  }
  write_cifar10_file(dir / "test_batch.bin", splits.test);
}

Dataset read_idx(const fs::path &images, const fs::path &labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  if (read_be32(img, 0, images) != 0x00000803) throw DataError(images.string() + ": bad magic at byte offset 0");
  if (read_be32(lab, 0, labels) != 0x00000801) throw DataError(labels.string() + ": bad magic at byte offset 0");
  const std::size_t n = read_be32(img, 4, images), h = read_be32(img, 8, images), w = read_be32(img, 12, images);
  const std::size_t n_labels = read_be32(lab, 4, labels);
  if (n != n_labels)
    throw DataError("IDX image count " + std::to_string(n) + " differs from label count " + std::to_string(n_labels));
  if (img.size() < 16 + n * h * w)
    throw DataError(images.string() + ": truncated payload at byte offset " + std::to_string(img.size()));
  if (lab.size() < 8 + n) throw DataError(labels.string() + ": truncated payload at byte offset " + std::to_string(lab.size()));
  Dataset data;
  data.channels = 1;
  data.height = static_cast<int>(h);
  data.width = static_cast<int>(w);
  data.norm = Normalization::mnist();
  data.pixels.assign(img.begin() + 16, img.begin() + static_cast<std::ptrdiff_t>(16 + n * h * w));
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    data.labels.push_back(lab[8 + i]);
    max_label = std::max<int>(max_label, lab[8 + i]);
  }
  data.classes = std::max(10, max_label + 1);
  return data;
}

Splits load_idx(const fs::path &dir) {
  return {read_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"),
          read_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte")};
}

void write_idx(const fs::path &images, const fs::path &labels, const Dataset &data) {
  if (data.channels != 1) throw DataError("IDX export needs single-channel images");
  std::vector<std::uint8_t> img, lab;
  put_be32(img, 0x00000803);
  put_be32(img, static_cast<std::uint32_t>(data.size()));
  put_be32(img, static_cast<std::uint32_t>(data.height));
  put_be32(img, static_cast<std::uint32_t>(data.width));
  img.insert(img.end(), data.pixels.begin(), data.pixels.end());
  put_be32(lab, 0x00000801);
  put_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (int l : data.labels) lab.push_back(static_cast<std::uint8_t>(l));
  write_file(images, img);
  write_file(labels, lab);
}

CropFlip sample_crop_flip(std::mt19937_64 &rng, int pad, double flip_probability) {
  std::uniform_int_distribution<int> offset(0, 2 * pad);
  std::bernoulli_distribution flip(flip_probability);
  CropFlip op;
  op.dx = offset(rng);
  op.dy = offset(rng);
  op.flip = flip(rng);
  return op;
}

std::vector<std::uint8_t> augment(std::span<const std::uint8_t> image, int channels, int height, int width,
                                  const CropFlip &op, int pad) {
  std::vector<std::uint8_t> out(image.size(), 0);
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < height; ++y) {
      const int sy = y + op.dy - pad;
      if (sy < 0 || sy >= height) continue;
      for (int x = 0; x < width; ++x) {
        const int sx = x + op.dx - pad;
        if (sx < 0 || sx >= width) continue;
        const int ox = op.flip ? width - 1 - x : x;
        out[(static_cast<std::size_t>(c) * height + y) * width + ox] =
            image[(static_cast<std::size_t>(c) * height + sy) * width + sx];
      }
    }
  return out;
}

Dataset subset(const Dataset &data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("subset: fraction must be in (0, 1]");
  if (fraction == 1.0) return data;
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(data.classes));
  for (std::size_t i = 0; i < data.size(); ++i) by_class.at(static_cast<std::size_t>(data.labels[i])).push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto &idx = by_class[c];
    if (idx.empty()) continue;
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    if (take == 0)
      throw std::invalid_argument("subset: fraction " + std::to_string(fraction) + " leaves class " +
                                  std::to_string(c) + " empty");
    std::shuffle(idx.begin(), idx.end(), rng);
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(keep.begin(), keep.end());
  Dataset out;
  out.channels = data.channels;
  out.height = data.height;
  out.width = data.width;
  out.classes = data.classes;
  out.norm = data.norm;
  out.labels.reserve(keep.size());
  out.pixels.reserve(keep.size() * data.image_size());
  for (auto i : keep) {
    out.labels.push_back(data.labels[i]);
    auto img = data.raw(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
  }
  return out;
}

Batch make_batch(const Dataset &data, std::span<const std::size_t> indices, std::mt19937_64 *augment_rng) {
  const std::size_t image = data.image_size();
  const std::size_t plane = static_cast<std::size_t>(data.height) * data.width;
  std::vector<float> values(indices.size() * image);
  Batch batch;
  batch.labels.reserve(indices.size());
  std::vector<std::uint8_t> scratch;
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const std::size_t i = indices[b];
    if (i >= data.size()) throw std::out_of_range("make_batch: index " + std::to_string(i) + " past end");
    std::span<const std::uint8_t> src = data.raw(i);
    if (augment_rng) {
      scratch = augment(src, data.channels, data.height, data.width, sample_crop_flip(*augment_rng));
      src = scratch;
    }
    float *dst = values.data() + b * image;
    for (std::size_t j = 0; j < image; ++j) {
      const std::size_t c = j / plane;
      dst[j] = normalize_pixel(src[j], data.norm.mean[c], data.norm.std[c]);
    }
    batch.labels.push_back(data.labels[i]);
  }
  batch.images = Tensor({static_cast<std::int64_t>(indices.size()), data.channels, data.height, data.width},
                        std::move(values));
  return batch;
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(epoch) + 1);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Splits make_synthetic_cifar(std::size_t train_per_class, std::size_t test_per_class, std::uint64_t seed,
                            int classes) {
  struct Pattern {
    float base[3];
    float amp[3];
    float fx, fy;
  };
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  std::vector<Pattern> patterns(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    auto &p = patterns[static_cast<std::size_t>(c)];
    for (int ch = 0; ch < 3; ++ch) {
      p.base[ch] = 70.0f + 110.0f * unit(rng);
      p.amp[ch] = 25.0f + 45.0f * unit(rng);
    }
    const float angle = std::numbers::pi_v<float> * static_cast<float>(c) / static_cast<float>(classes);
    const float freq = 0.25f + 0.35f * unit(rng);
    p.fx = freq * std::cos(angle);
    p.fy = freq * std::sin(angle);
  }
  std::normal_distribution<float> noise(0.0f, 28.0f);
  auto fill = [&](Dataset &d, std::size_t per_class) {
    d.labels.reserve(per_class * static_cast<std::size_t>(classes));
    for (std::size_t i = 0; i < per_class; ++i)
      for (int c = 0; c < classes; ++c) {
        const auto &p = patterns[static_cast<std::size_t>(c)];
        const float phase = 2.0f * std::numbers::pi_v<float> * unit(rng);
        const float gain = 0.6f + 0.8f * unit(rng);
        for (int ch = 0; ch < 3; ++ch)
          for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
              const float wave = std::sin(p.fx * x + p.fy * y + phase);
              const float v = p.base[ch] + gain * p.amp[ch] * wave + noise(rng);
              d.pixels.push_back(static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0f, 255.0f)));
            }
        d.labels.push_back(c);
      }
  };
  Splits s;
  s.train.classes = s.test.classes = classes;
  fill(s.train, train_per_class);
  fill(s.test, test_per_class);
  return s;
}

}  // namespace bwrf
