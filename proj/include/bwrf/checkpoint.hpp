#ifndef BWRF_CHECKPOINT_HPP
#define BWRF_CHECKPOINT_HPP

// Binary model checkpoint, all integers little-endian u32:
//
//   "BWRF" | version | arch length | arch bytes | bits | precision | count
//   count × { name length | name bytes | rank | extents… | float32 payload }
//   CRC-32 of every preceding byte
//
// Quantizer scales, calibration flags and BN running statistics are stored
// alongside the weights.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bwrf/network.hpp"

namespace bwrf {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::string arch;
  int bits = 32;
  Precision precision = Precision::full;
};

struct Checkpoint {
  CheckpointHeader header;
  std::vector<StateEntry> tensors;
};

std::vector<std::uint8_t> serialize(BlockModel &model);
/// Parses and verifies the trailing checksum.
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path &path, BlockModel &model);
Checkpoint read_checkpoint(const std::filesystem::path &path);
/// Rebuilds the model recorded in a checkpoint.
BlockModel load_model(const std::filesystem::path &path);
BlockModel model_from_checkpoint(const Checkpoint &ckpt);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);
/// CRC-32 of the model's serialized form; changes iff any stored value does.
std::uint32_t state_checksum(BlockModel &model);

}  // namespace bwrf

#endif  // BWRF_CHECKPOINT_HPP
