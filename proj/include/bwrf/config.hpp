#ifndef BWRF_CONFIG_HPP
#define BWRF_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace bwrf {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every knob of a run. The text form is line-oriented `key = value` with
/// `#` comments; lists are comma-separated.
///
/// alpha and temperature are not given by the method's authors: alpha
/// defaults to 1 for every graft and the distillation temperature to 1.
struct RunConfig {
  // model
  std::string arch = "resnet20";
  int width = 16;
  int n_blocks = 3;
  int bits = 4;
  // objective
  std::vector<float> alpha{1.0f, 1.0f};
  float temperature = 1.0f;
  bool use_mp_targets = true;
  bool use_fp_kd = true;
  bool use_mp_kd = true;
  bool use_avg_labels = true;
  std::vector<int> branches;  // empty: all grafts
  // optimizer and schedule
  float lr = 4e-2f;
  float weight_decay = 1e-4f;
  float momentum = 0.9f;
  float scale_lr_multiplier = 1.0f;
  bool grad_scale = true;
  int epochs = 300;
  std::vector<int> milestones{150, 225};
  float lr_decay = 0.1f;
  int batch_size = 128;
  std::uint64_t seed = 0;
  bool augment = true;
  // data
  std::string dataset = "cifar10";  // cifar10 | idx
  std::string data_dir = "data/cifar-10-batches-bin";
  double subset = 1.0;
  double test_subset = 1.0;
  std::vector<float> norm_mean;  // empty: dataset default
  std::vector<float> norm_std;
  // artifacts
  std::string fp_checkpoint;
  std::string lp_checkpoint;
  std::string output_dir = "runs/default";
  int cos_every = 0;  // epochs between feature-similarity columns; 0 disables
  int cos_samples = 1024;

  /// Applies one `key = value` assignment; unknown keys are rejected.
  void set(const std::string &key, const std::string &value);
  /// Applies `key=value`.
  void apply_override(const std::string &assignment);
  /// Checks cross-field constraints.
  void validate() const;
  /// Canonical text listing every key.
  std::string to_text() const;

  static RunConfig parse(const std::string &text);
  static RunConfig load(const std::filesystem::path &path);
  void save(const std::filesystem::path &path) const;

  static const std::vector<std::string> &keys();
};

}  // namespace bwrf

#endif  // BWRF_CONFIG_HPP
