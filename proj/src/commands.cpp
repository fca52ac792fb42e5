#include "bwrf/commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <random>

#include "bwrf/bwrf.hpp"
#include "bwrf/checkpoint.hpp"
#include "bwrf/ops.hpp"
#include "bwrf/similarity.hpp"

namespace bwrf {

namespace fs = std::filesystem;

namespace {

// Subsets stay fixed across run seeds so that arms compare on the same data.
constexpr std::uint64_t kSubsetSeed = 0;
constexpr std::size_t kEvalBatch = 200;

std::string fmt(double v, const char *spec = "%.8g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string acc_text(double v) { return fmt(v, "%.4f"); }

class CsvWriter {
 public:
  CsvWriter(const fs::path &path, const std::vector<std::string> &header) : path_(path), out_(path, std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    row(header);
  }
  void row(const std::vector<std::string> &cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
    out_.flush();
    if (!out_) throw std::runtime_error("write failed for " + path_.string());
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

SgdConfig sgd_config(const RunConfig &cfg) {
  SgdConfig s;
  s.lr = cfg.lr;
  s.momentum = cfg.momentum;
  s.weight_decay = cfg.weight_decay;
  s.scale_lr_multiplier = cfg.scale_lr_multiplier;
  return s;
}

Schedule schedule_for(const RunConfig &cfg) {
  Schedule s;
  s.milestones = cfg.milestones;
  s.gamma = cfg.lr_decay;
  s.epochs = cfg.epochs;
  s.validate();
  return s;
}

LossWeights weights_for(const RunConfig &cfg) {
  LossWeights w;
  w.alpha = cfg.alpha;
  w.temperature = cfg.temperature;
  w.use_mp_targets = cfg.use_mp_targets;
  w.use_fp_kd = cfg.use_fp_kd;
  w.use_mp_kd = cfg.use_mp_kd;
  w.use_avg_labels = cfg.use_avg_labels;
  w.branches = cfg.branches;
  return w;
}

fs::path prepare_output(const RunConfig &cfg) {
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  cfg.save(out / artifacts::config);
  return out;
}

void check_geometry(const BlockModel &model, const Dataset &data, const std::string &what) {
  if (model.spec().in_channels != data.channels || model.spec().classes != data.classes)
    throw CheckpointError(what + " expects " + std::to_string(model.spec().in_channels) + " channels and " +
                          std::to_string(model.spec().classes) + " classes; dataset has " +
                          std::to_string(data.channels) + " and " + std::to_string(data.classes));
}

BlockModel require_model(const std::string &path, Precision precision, const std::string &key) {
  if (path.empty()) throw ConfigError("config: " + key + " is required");
  BlockModel model = load_model(path);
  if (model.precision() != precision)
    throw CheckpointError(path + " holds a " + (model.precision() == Precision::full ? "full" : "low") +
                          "-precision model");
  return model;
}

template <typename Step>
void for_each_batch(const Dataset &train, std::uint64_t seed, int epoch, int batch_size, std::mt19937_64 *rng,
                    Step &&step) {
  const auto order = epoch_order(train.size(), seed, epoch);
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::span<const std::size_t> idx(order.data() + start, std::min(bs, order.size() - start));
    step(make_batch(train, idx, rng));
  }
}

int train_lp(const RunConfig &cfg, const LossWeights &weights, std::ostream &log) {
  cfg.validate();
  weights.validate(cfg.n_blocks);
  const Schedule schedule = schedule_for(cfg);
  const Splits data = load_splits(cfg);
  const BlockSpec spec = spec_for(cfg, data.train);
  BlockModel fp = require_model(cfg.fp_checkpoint, Precision::full, "fp_checkpoint");
  if (!(fp.spec() == spec))
    throw CheckpointError("FP checkpoint architecture " + fp.spec().name() + " does not match configured " +
                          spec.name());

  BlockModel lp = build_model(spec, Precision::low, cfg.bits, cfg.seed);
  init_lp_from_fp(lp, fp);
  for (Quantizer *q : lp.quantizers()) q->set_grad_scale(cfg.grad_scale);
  Sgd optimizer(lp.parameters(), sgd_config(cfg));

  const fs::path out = prepare_output(cfg);
  const int n = spec.n_blocks();
  const bool with_cosine = cfg.cos_every > 0;
  CsvWriter csv(out / artifacts::metrics, lp_metrics_header(n, with_cosine));
  const std::uint32_t fp_checksum = state_checksum(fp);
  std::mt19937_64 augment_rng(cfg.seed ^ 0x5bd1e995u);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const float lr = lr_at(epoch, schedule, cfg.lr);
    optimizer.set_lr(lr);
    lp.set_mode(NormMode::train);
    double total = 0.0, target = 0.0, distill = 0.0;
    std::size_t seen = 0, correct = 0;
    for_each_batch(data.train, cfg.seed, epoch, cfg.batch_size, cfg.augment ? &augment_rng : nullptr,
                   [&](const Batch &batch) {
                     const StepMetrics m = train_step(lp, fp, batch.images, batch.labels, weights, optimizer);
                     total += m.loss_total * static_cast<double>(m.batch);
                     target += m.loss_target * static_cast<double>(m.batch);
                     distill += m.loss_distill * static_cast<double>(m.batch);
                     correct += m.correct_q;
                     seen += m.batch;
                   });
    if (state_checksum(fp) != fp_checksum)
      throw FrozenModelError("frozen FP model changed during epoch " + std::to_string(epoch + 1));

    const double denom = static_cast<double>(seen);
    std::vector<std::string> row{std::to_string(epoch + 1), fmt(lr, "%.6g"), fmt(total / denom), fmt(target / denom),
                                 fmt(distill / denom), acc_text(100.0 * static_cast<double>(correct) / denom)};
    const Accuracy acc_q = evaluate(lp, data.test, kEvalBatch);
    row.push_back(acc_text(acc_q.top1));
    std::vector<double> acc_m;
    for (int k = 1; k < n; ++k) {
      acc_m.push_back(evaluate_graft(lp, fp, k, data.test, kEvalBatch).top1);
      row.push_back(acc_text(acc_m.back()));
    }
    const Accuracy acc_f = evaluate(fp, data.test, kEvalBatch);
    row.push_back(acc_text(acc_f.top1));
    if (with_cosine) {
      const bool due = epoch == 0 || epoch + 1 == cfg.epochs || (epoch + 1) % cfg.cos_every == 0;
      if (due) {
        const auto sim = analyze_similarity(lp, fp, data.test, static_cast<std::size_t>(cfg.cos_samples));
        for (double v : sim.lp_vs_fp) row.push_back(fmt(v));
        for (double v : sim.graft) row.push_back(fmt(v));
      } else {
        row.insert(row.end(), static_cast<std::size_t>(2 * n - 1), "");
      }
    }
    csv.row(row);
    log << "epoch " << epoch + 1 << "/" << cfg.epochs << " lr " << fmt(lr, "%.6g") << " loss " << fmt(total / denom, "%.4f")
        << " acc_Q " << acc_text(acc_q.top1);
    for (int k = 1; k < n; ++k) log << " acc_M" << k << " " << acc_text(acc_m[k - 1]);
    log << " acc_F " << acc_text(acc_f.top1) << '\n';
  }
  save_checkpoint(out / artifacts::lp, lp);
  return kExitOk;
}

}  // namespace

std::string data_root(const RunConfig &cfg) {
  if (const char *env = std::getenv("BWRF_DATA_ROOT"); env != nullptr && *env != '\0') return env;
  return cfg.data_dir;
}

Splits load_splits(const RunConfig &cfg) {
  const fs::path root = data_root(cfg);
  Splits splits = cfg.dataset == "idx" ? load_idx(root) : load_cifar10(root);
  if (!cfg.norm_mean.empty()) {
    if (static_cast<int>(cfg.norm_mean.size()) != splits.train.channels)
      throw ConfigError("config: norm_mean has " + std::to_string(cfg.norm_mean.size()) + " entries for " +
                        std::to_string(splits.train.channels) + " channels");
    splits.train.norm = splits.test.norm = Normalization{cfg.norm_mean, cfg.norm_std};
  }
  try {
    if (cfg.subset < 1.0) splits.train = subset(splits.train, cfg.subset, kSubsetSeed);
    if (cfg.test_subset < 1.0) splits.test = subset(splits.test, cfg.test_subset, kSubsetSeed);
  } catch (const std::invalid_argument &e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return splits;
}

BlockSpec spec_for(const RunConfig &cfg, const Dataset &data) {
  BlockSpec spec;
  try {
    spec = BlockSpec::parse(cfg.arch);
    spec.base_width = cfg.width;
    spec.in_channels = data.channels;
    spec.classes = data.classes;
    spec.validate();
  } catch (const std::invalid_argument &e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return spec;
}

std::vector<std::string> lp_metrics_header(int n_blocks, bool with_cosine) {
  std::vector<std::string> h{"epoch", "lr", "loss_total", "loss_target", "loss_distill", "train_acc_Q", "acc_Q"};
  for (int k = 1; k < n_blocks; ++k) h.push_back("acc_M" + std::to_string(k));
  h.push_back("acc_F");
  if (with_cosine) {
    for (int i = 1; i <= n_blocks; ++i) h.push_back("cos_QF" + std::to_string(i));
    for (int i = 2; i <= n_blocks; ++i) h.push_back("cos_QM" + std::to_string(i));
  }
  return h;
}

int cmd_train_fp(const RunConfig &cfg, std::ostream &log) {
  cfg.validate();
  const Schedule schedule = schedule_for(cfg);
  const Splits data = load_splits(cfg);
  const BlockSpec spec = spec_for(cfg, data.train);
  BlockModel fp = build_model(spec, Precision::full, 32, cfg.seed);
  fp.set_frozen(false);
  Sgd optimizer(fp.parameters(), sgd_config(cfg));

  const fs::path out = prepare_output(cfg);
  CsvWriter csv(out / artifacts::metrics, {"epoch", "lr", "loss", "train_acc_F", "acc_F", "acc_F_top5"});
  std::mt19937_64 augment_rng(cfg.seed ^ 0x5bd1e995u);
  double best = -1.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const float lr = lr_at(epoch, schedule, cfg.lr);
    optimizer.set_lr(lr);
    fp.set_mode(NormMode::train);
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    for_each_batch(data.train, cfg.seed, epoch, cfg.batch_size, cfg.augment ? &augment_rng : nullptr,
                   [&](const Batch &batch) {
                     fp.zero_grad();
                     const Tensor logits = forward(fp, batch.images);
                     const Tensor loss = cross_entropy(logits, batch.labels);
                     backward(loss);
                     optimizer.step();
                     loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch.labels.size());
                     correct += count_correct(logits, batch.labels);
                     seen += batch.labels.size();
                   });
    const Accuracy acc = evaluate(fp, data.test, kEvalBatch);
    const double denom = static_cast<double>(seen);
    csv.row({std::to_string(epoch + 1), fmt(lr, "%.6g"), fmt(loss_sum / denom),
             acc_text(100.0 * static_cast<double>(correct) / denom), acc_text(acc.top1), acc_text(acc.top5)});
    log << "epoch " << epoch + 1 << "/" << cfg.epochs << " lr " << fmt(lr, "%.6g") << " loss "
        << fmt(loss_sum / denom, "%.4f") << " acc_F " << acc_text(acc.top1) << '\n';
    if (acc.top1 > best) {
      best = acc.top1;
      save_checkpoint(out / artifacts::fp_best, fp);
    }
  }
  save_checkpoint(out / artifacts::fp_last, fp);
  return kExitOk;
}

int cmd_train_bwrf(const RunConfig &cfg, std::ostream &log) { return train_lp(cfg, weights_for(cfg), log); }

int cmd_train_baseline(const RunConfig &cfg, std::ostream &log) {
  RunConfig plain = cfg;
  plain.use_mp_targets = plain.use_fp_kd = plain.use_mp_kd = plain.use_avg_labels = false;
  return train_lp(plain, weights_for(plain), log);
}

int cmd_eval(const RunConfig &cfg, const std::string &branch, std::ostream &out) {
  cfg.validate();
  const Splits data = load_splits(cfg);
  Accuracy acc;
  if (branch == "Q") {
    BlockModel lp = require_model(cfg.lp_checkpoint, Precision::low, "lp_checkpoint");
    check_geometry(lp, data.test, "LP checkpoint");
    acc = evaluate(lp, data.test, kEvalBatch);
  } else if (branch == "F") {
    BlockModel fp = require_model(cfg.fp_checkpoint, Precision::full, "fp_checkpoint");
    check_geometry(fp, data.test, "FP checkpoint");
    acc = evaluate(fp, data.test, kEvalBatch);
  } else if (branch.size() > 1 && branch[0] == 'M') {
    int k = 0;
    try {
      std::size_t used = 0;
      k = std::stoi(branch.substr(1), &used);
      if (used + 1 != branch.size()) throw std::invalid_argument(branch);
    } catch (const std::exception &) {
      throw ConfigError("branch '" + branch + "' is not Q, F or M<k>");
    }
    if (cfg.fp_checkpoint.empty()) throw ConfigError("branch " + branch + " needs fp_checkpoint");
    BlockModel lp = require_model(cfg.lp_checkpoint, Precision::low, "lp_checkpoint");
    BlockModel fp = require_model(cfg.fp_checkpoint, Precision::full, "fp_checkpoint");
    if (!(lp.spec() == fp.spec()))
      throw CheckpointError("LP " + lp.spec().name() + " and FP " + fp.spec().name() + " differ");
    check_geometry(lp, data.test, "LP checkpoint");
    if (k < 1 || k >= lp.n_blocks())
      throw ConfigError("branch " + branch + " outside M1..M" + std::to_string(lp.n_blocks() - 1));
    acc = evaluate_graft(lp, fp, k, data.test, kEvalBatch);
  } else {
    throw ConfigError("branch '" + branch + "' is not Q, F or M<k>");
  }
  out << "branch,top1,top5,samples\n"
      << branch << ',' << acc_text(acc.top1) << ',' << acc_text(acc.top5) << ',' << acc.samples << '\n';
  return kExitOk;
}

int cmd_analyze_similarity(const RunConfig &cfg, std::ostream &out) {
  cfg.validate();
  const Splits data = load_splits(cfg);
  BlockModel lp = require_model(cfg.lp_checkpoint, Precision::low, "lp_checkpoint");
  BlockModel fp = require_model(cfg.fp_checkpoint, Precision::full, "fp_checkpoint");
  if (!(lp.spec() == fp.spec()))
    throw CheckpointError("LP " + lp.spec().name() + " and FP " + fp.spec().name() + " differ in shape");
  check_geometry(lp, data.test, "LP checkpoint");
  const auto report = analyze_similarity(lp, fp, data.test, static_cast<std::size_t>(cfg.cos_samples));

  const fs::path dir = prepare_output(cfg);
  CsvWriter csv(dir / artifacts::similarity, {"block", "cos_QF", "cos_QM", "samples"});
  out << "block,cos_QF,cos_QM,samples\n";
  for (int i = 1; i <= lp.n_blocks(); ++i) {
    const std::string graft = i >= 2 ? fmt(report.graft[i - 2]) : "";
    const std::vector<std::string> row{std::to_string(i), fmt(report.lp_vs_fp[i - 1]), graft,
                                       std::to_string(report.samples)};
    csv.row(row);
    out << row[0] << ',' << row[1] << ',' << row[2] << ',' << row[3] << '\n';
  }
  return kExitOk;
}

int run_guarded(const std::function<int()> &body, std::ostream &err) {
  try {
    return body();
  } catch (const ConfigError &e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError &e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const CheckpointError &e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kExitCheckpoint;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace bwrf
