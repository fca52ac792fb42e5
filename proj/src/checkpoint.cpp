#include "bwrf/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace bwrf {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void text(const std::string &s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> &bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string text() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char *>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size())
      throw CheckpointError("checkpoint truncated at byte offset " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> serialize(BlockModel &model) {
  Writer w;
  w.raw("BWRF");
  w.u32(kCheckpointVersion);
  w.text(model.spec().name());
  w.u32(static_cast<std::uint32_t>(model.bits()));
  w.u32(model.precision() == Precision::low ? 1u : 0u);
  auto state = model.export_state();
  w.u32(static_cast<std::uint32_t>(state.size()));
  for (const auto &e : state) {
    w.text(e.name);
    w.u32(static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto extent : e.tensor.shape()) w.u32(static_cast<std::uint32_t>(extent));
    for (float v : e.tensor.data()) w.f32(v);
  }
  w.u32(crc32(w.bytes()));
  return std::move(w.bytes());
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "BWRF", 4) != 0)
    throw CheckpointError("not a checkpoint: bad magic at byte offset 0");
  const std::size_t body = bytes.size() - 4;
  Reader trailer(bytes.subspan(body));
  const std::uint32_t stored = trailer.u32();
  const std::uint32_t actual = crc32(bytes.first(body));
  if (stored != actual) throw CheckpointError("checkpoint checksum mismatch");

  Reader r(bytes.first(body));
  r.u32();  // magic, already checked
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.header.arch = r.text();
  ckpt.header.bits = static_cast<int>(r.u32());
  ckpt.header.precision = r.u32() ? Precision::low : Precision::full;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.text();
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto &e : shape) e = r.u32();
    std::vector<float> values(static_cast<std::size_t>(numel(shape)));
    for (auto &v : values) v = r.f32();
    ckpt.tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(values)), ParamKind::buffer});
  }
  if (r.pos() != body) throw CheckpointError("trailing bytes after tensor records at offset " + std::to_string(r.pos()));
  return ckpt;
}

void save_checkpoint(const std::filesystem::path &path, BlockModel &model) {
  const auto bytes = serialize(model);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

BlockModel model_from_checkpoint(const Checkpoint &ckpt) {
  BlockSpec spec;
  try {
    spec = BlockSpec::parse(ckpt.header.arch);
  } catch (const std::invalid_argument &e) {
    throw CheckpointError(std::string("checkpoint architecture: ") + e.what());
  }
  if (!supported_bits(ckpt.header.bits))
    throw CheckpointError("checkpoint bit-width " + std::to_string(ckpt.header.bits) + " unsupported");
  BlockModel model = build_model(spec, ckpt.header.precision, ckpt.header.bits);
  try {
    model.import_state(ckpt.tensors);
  } catch (const std::exception &e) {
    throw CheckpointError(std::string("checkpoint does not match its architecture: ") + e.what());
  }
  return model;
}

BlockModel load_model(const std::filesystem::path &path) { return model_from_checkpoint(read_checkpoint(path)); }

std::uint32_t state_checksum(BlockModel &model) {
  const auto bytes = serialize(model);
  return crc32(std::span<const std::uint8_t>(bytes).first(bytes.size() - 4));
}

}  // namespace bwrf
