#ifndef BWRF_COMMANDS_HPP
#define BWRF_COMMANDS_HPP

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "bwrf/config.hpp"
#include "bwrf/data.hpp"
#include "bwrf/network.hpp"
#include "bwrf/training.hpp"

namespace bwrf {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitCheckpoint = 4;

/// Raised when the frozen FP model's state checksum drifts during training.
class FrozenModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File names written into `output_dir`.
namespace artifacts {
inline constexpr const char *config = "config.txt";
inline constexpr const char *metrics = "metrics.csv";
inline constexpr const char *fp_best = "fp.ckpt";
inline constexpr const char *fp_last = "fp_last.ckpt";
inline constexpr const char *lp = "lp.ckpt";
inline constexpr const char *eval = "eval.csv";
inline constexpr const char *similarity = "similarity.csv";
}  // namespace artifacts

/// Dataset root after the BWRF_DATA_ROOT environment override.
std::string data_root(const RunConfig &cfg);
/// Loads both splits and applies subsetting and normalization overrides.
Splits load_splits(const RunConfig &cfg);
/// Architecture from the config and the dataset geometry.
BlockSpec spec_for(const RunConfig &cfg, const Dataset &data);

/// Header of the training metrics CSV of an LP run.
std::vector<std::string> lp_metrics_header(int n_blocks, bool with_cosine);

/// Plain cross-entropy training of the FP model. Saves the best-accuracy
/// checkpoint and the final one.
int cmd_train_fp(const RunConfig &cfg, std::ostream &log);
/// Block-wise replacement training of the LP model against a frozen FP
/// checkpoint.
int cmd_train_bwrf(const RunConfig &cfg, std::ostream &log);
/// Plain QAT: the same loop with every auxiliary loss term switched off.
int cmd_train_baseline(const RunConfig &cfg, std::ostream &log);
/// Test-split top-1/top-5 of branch "Q", "F" or "M<k>".
int cmd_eval(const RunConfig &cfg, const std::string &branch, std::ostream &out);
/// Per-block cosine similarity of LP and FP features.
int cmd_analyze_similarity(const RunConfig &cfg, std::ostream &out);

/// Runs `body`, mapping config, data and checkpoint failures onto exit codes
/// and reporting them on `err`.
int run_guarded(const std::function<int()> &body, std::ostream &err);

}  // namespace bwrf

#endif  // BWRF_COMMANDS_HPP
