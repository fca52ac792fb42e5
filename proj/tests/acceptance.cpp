// Acceptance harness: one PASS/FAIL line per criterion.
//
//   acceptance --workdir DIR       criteria 1–6, 9, 10 (7 and 8 deferred)
//   acceptance --desk-scale DIR    criteria 7 and 8 from finished desk-scale runs

#include <CLI11.hpp>

#include <chrono>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include "bwrf/bwrf.hpp"
#include "bwrf/checkpoint.hpp"
#include "bwrf/commands.hpp"
#include "bwrf/quantizer.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"

namespace fs = std::filesystem;
using namespace bwrf;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(const std::string &id, bool pass, const std::string &detail) {
  std::printf("[%s] criterion %s: %s\n", pass ? "PASS" : "FAIL", id.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char *f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Quantizer oracle suite
// ---------------------------------------------------------------------------

void quantizer_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> bits_d(2, 8);
  std::bernoulli_distribution sign_d(0.5);
  std::uniform_real_distribution<float> s_d(1e-3f, 2.0f);
  std::normal_distribution<float> v_d(0.0f, 1.0f);

  std::size_t forward_mismatch = 0, mask_mismatch = 0;
  double worst = 0.0;
  constexpr int kTriples = 100000;
  for (int i = 0; i < kTriples; ++i) {
    const QuantSpec spec(bits_d(rng), sign_d(rng) ? Signedness::signed_ : Signedness::unsigned_);
    const float s = s_d(rng);
    // spread v over the clip range and past both saturation sides
    const float v = v_d(rng) * s * static_cast<float>(spec.upper()) * 0.75f;
    const float lo = static_cast<float>(spec.lower()), hi = static_cast<float>(spec.upper());

    const float ratio = v / s;
    const float clipped = std::clamp(ratio, lo, hi);
    const float expected = s * std::round(clipped);
    const std::vector<float> one{v};
    const float got = quantize_forward(one, s, spec)[0];
    if (std::memcmp(&got, &expected, sizeof got) != 0) ++forward_mismatch;

    const float indicator = (lo < ratio && ratio < hi) ? 1.0f : 0.0f;
    const std::vector<float> up{1.0f};
    if (quantize_backward_input(up, one, s, spec)[0] != indicator) ++mask_mismatch;

    // d/ds of the relaxed map: region and rounding residual frozen at s,
    // s·N below, s·P above, s·(v/s + residual) inside
    const double residual = static_cast<double>(std::round(ratio)) - static_cast<double>(ratio);
    auto relaxed = [&](double sc) {
      if (ratio <= lo) return sc * lo;
      if (ratio >= hi) return sc * hi;
      return sc * (static_cast<double>(v) / sc + residual);
    };
    const double h = 1e-3;
    const double fd = (relaxed(s + h) - relaxed(s - h)) / (2 * h);
    const double ana = quantize_backward_scale(up, one, s, spec, false);
    const double scaled = quantize_backward_scale(up, one, s, spec, true);
    const double fd_scaled = fd / std::sqrt(static_cast<double>(spec.upper()));
    worst = std::max(worst, std::abs(ana - fd) / std::max({std::abs(fd), std::abs(ana), 1e-6}));
    worst = std::max(worst, std::abs(scaled - fd_scaled) / std::max({std::abs(fd_scaled), std::abs(scaled), 1e-6}));
  }
  const double elapsed = seconds_since(t0);
  const bool pass = forward_mismatch == 0 && mask_mismatch == 0 && worst < 1e-3 && elapsed < 10.0;
  std::ostringstream d;
  d << "forward mismatches " << forward_mismatch << "/" << kTriples << ", mask mismatches " << mask_mismatch
    << ", scale-grad max rel err " << fmt("%.3g", worst) << " (< 1e-3), " << fmt("%.2f", elapsed) << " s (< 10 s)";
  report("1 quantizer oracles", pass, d.str());
}

// ---------------------------------------------------------------------------
// 2. Autodiff suite
// ---------------------------------------------------------------------------

void autodiff_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  double worst = 0.0;
  std::string worst_op;
  int trials = 0;
  for (const auto &op : testing::gradcheck_ops())
    for (int t = 0; t < 100; ++t, ++trials) {
      const auto r = testing::check_gradients(testing::make_problem(op, rng));
      if (r.rel_error > worst) {
        worst = r.rel_error;
        worst_op = op;
      }
    }
  const double elapsed = seconds_since(t0);
  std::ostringstream d;
  d << testing::gradcheck_ops().size() << " ops x 100 trials, max rel err " << fmt("%.3g", worst) << " (" << worst_op
    << ", < 1e-3), " << fmt("%.2f", elapsed) << " s (< 60 s)";
  report("2 autodiff finite differences", worst < 1e-3 && elapsed < 60.0, d.str());
}

// ---------------------------------------------------------------------------
// 3 & 4. Graft equivalence and gradient decomposition
// ---------------------------------------------------------------------------

BlockSpec acceptance_spec() {
  BlockSpec s;
  s.depth = 20;
  s.base_width = 8;
  return s;
}

testing::Pair perturbed_pair(std::uint64_t seed) {
  auto p = testing::make_pair(seed, 4, acceptance_spec());
  std::mt19937_64 rng(seed ^ 0xabcdef);
  std::normal_distribution<float> noise(0.0f, 0.02f);
  for (auto &e : p.lp.parameters())
    if (e.kind == ParamKind::weight)
      for (auto &v : e.tensor.mutable_data()) v += noise(rng);
  return p;
}

void graft_equivalence() {
  auto p = perturbed_pair(31);
  p.lp.set_mode(NormMode::eval);
  std::mt19937_64 rng(32);
  std::size_t mismatched = 0, compared = 0;
  BlockModel standalone1 = testing::compose(p.lp, p.fp, 1);
  BlockModel standalone2 = testing::compose(p.lp, p.fp, 2);
  for (int batch = 0; batch < 20; ++batch) {
    const Tensor x = testing::random_images(rng, 4, 32);
    const auto feats = forward_collect(p.lp, x).features;
    for (int k = 1; k <= 2; ++k) {
      const Tensor grafted = graft_forward(feats, p.fp, k);
      const Tensor explicit_model = forward(k == 1 ? standalone1 : standalone2, x);
      ++compared;
      if (testing::values(grafted) != testing::values(explicit_model)) ++mismatched;
    }
  }
  report("3 graft equivalence", mismatched == 0,
         std::to_string(compared - mismatched) + "/" + std::to_string(compared) +
             " (batch, k) pairs bit-identical to standalone {Q_1..Q_k, F_k+1..F_n}");
}

void gradient_decomposition() {
  auto p = perturbed_pair(41);
  std::mt19937_64 rng(42);
  LossWeights w;
  w.alpha = {0.6f, 1.3f};
  w.temperature = 2.0f;
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = testing::random_images(rng, 4, 32);
    const auto y = testing::random_labels(rng, 4);
    p.lp.zero_grad();
    backward(total_loss(bwrf_forward(p.lp, p.fp, x, w), y, w).total);
    const auto combined = testing::lp_grads(p.lp);

    std::vector<std::vector<float>> summed;
    for (int branch = 0; branch <= 2; ++branch) {
      p.lp.zero_grad();
      const auto g = bwrf_forward(p.lp, p.fp, x, w);
      Tensor loss;
      if (branch == 0) {
        loss = add(add(cross_entropy(g.y_q, y), kd_loss(g.y_q, g.y_f, w.temperature)),
                   kd_loss(g.y_q, avg_soft_label(g.y_f, g.y_m, 2), w.temperature));
      } else {
        const Tensor &ym = g.y_m[static_cast<std::size_t>(branch - 1)];
        loss = scale(add(add(cross_entropy(ym, y), kd_loss(ym, g.y_f, w.temperature)),
                         kd_loss(ym, avg_soft_label(g.y_f, g.y_m, branch - 1), w.temperature)),
                     w.alpha_at(branch));
      }
      backward(loss);
      auto grads = testing::lp_grads(p.lp);
      if (summed.empty()) summed = std::move(grads);
      else
        for (std::size_t i = 0; i < grads.size(); ++i)
          for (std::size_t j = 0; j < grads[i].size(); ++j) summed[i][j] += grads[i][j];
    }
    for (std::size_t i = 0; i < combined.size(); ++i)
      for (std::size_t j = 0; j < combined[i].size(); ++j)
        worst = std::max(worst, static_cast<double>(std::abs(combined[i][j] - summed[i][j])));
  }
  report("4 gradient-sum decomposition", worst <= 1e-5,
         "max |combined − Σ per-branch| over all LP parameters = " + fmt("%.3g", worst) + " (<= 1e-5)");
}

// ---------------------------------------------------------------------------
// 5, 6, 9. End-to-end runs on CIFAR-format data
// ---------------------------------------------------------------------------

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void end_to_end(const fs::path &work) {
  fs::remove_all(work);
  const fs::path data = work / "data";
  // Full CIFAR-10 geometry: 50 000 train / 10 000 test records. Real images are
  // not available offline, so class-conditional synthetic images stand in.
  write_cifar10_dir(data, make_synthetic_cifar(5000, 1000, 7));

  RunConfig cfg;
  cfg.data_dir = data.string();
  cfg.subset = 0.01;
  cfg.test_subset = 0.05;
  cfg.batch_size = 64;
  cfg.seed = 3;
  cfg.milestones = {2};
  std::ostringstream log;

  RunConfig fp_cfg = cfg;
  fp_cfg.epochs = 2;
  fp_cfg.output_dir = (work / "fp").string();
  const int fp_rc = run_guarded([&] { return cmd_train_fp(fp_cfg, log); }, std::cerr);
  const fs::path fp_ckpt = work / "fp" / artifacts::fp_best;
  cfg.fp_checkpoint = fp_ckpt.string();

  // 5. frozen-FP audit over 3 epochs of BWRF training
  {
    const auto t0 = Clock::now();
    const std::string before = slurp(fp_ckpt);
    BlockModel fp_before = load_model(fp_ckpt);
    const std::uint32_t sum_before = state_checksum(fp_before);
    RunConfig run = cfg;
    run.epochs = 3;
    run.output_dir = (work / "bwrf").string();
    const int rc = run_guarded([&] { return cmd_train_bwrf(run, log); }, std::cerr);
    BlockModel fp_after = load_model(fp_ckpt);
    const bool unchanged = slurp(fp_ckpt) == before && state_checksum(fp_after) == sum_before;
    std::ostringstream d;
    d << "train-fp rc " << fp_rc << ", train-bwrf rc " << rc << " (per-epoch in-memory audit inside), FP checksum "
      << std::hex << sum_before << std::dec << (unchanged ? " unchanged" : " CHANGED") << ", 500-image subset, 3 epochs, "
      << fmt("%.1f", seconds_since(t0)) << " s";
    report("5 frozen-FP audit", fp_rc == 0 && rc == 0 && unchanged, d.str());
  }

  // 6. all auxiliary toggles off == baseline, same seed
  {
    RunConfig off = cfg;
    off.epochs = 3;
    off.use_mp_targets = off.use_fp_kd = off.use_mp_kd = off.use_avg_labels = false;
    off.output_dir = (work / "bwrf_off").string();
    RunConfig base = cfg;
    base.epochs = 3;
    base.output_dir = (work / "baseline").string();
    const int rc_off = run_guarded([&] { return cmd_train_bwrf(off, log); }, std::cerr);
    const int rc_base = run_guarded([&] { return cmd_train_baseline(base, log); }, std::cerr);
    const std::string a = slurp(work / "bwrf_off" / artifacts::metrics);
    const std::string b = slurp(work / "baseline" / artifacts::metrics);
    const bool same_ckpt = slurp(work / "bwrf_off" / artifacts::lp) == slurp(work / "baseline" / artifacts::lp);
    const bool pass = rc_off == 0 && rc_base == 0 && !a.empty() && a == b && same_ckpt;
    report("6 reduction to baseline", pass,
           std::string("metrics CSV ") + (a == b ? "bit-identical" : "DIFFERS") + " (" + std::to_string(a.size()) +
               " bytes), LP checkpoint " + (same_ckpt ? "bit-identical" : "DIFFERS"));
  }

  // 9. checkpoint round trip on trained models
  {
    bool identical = true;
    std::size_t total = 0;
    for (const fs::path src : {work / "bwrf" / artifacts::lp, fp_ckpt}) {
      BlockModel m = load_model(src);
      const fs::path a = work / "rt" / ("a_" + src.filename().string()), b = work / "rt" / ("b_" + src.filename().string());
      save_checkpoint(a, m);
      BlockModel m2 = load_model(a);
      save_checkpoint(b, m2);
      identical = identical && slurp(a) == slurp(b) && slurp(a) == slurp(src);
      total += fs::file_size(a);
    }
    report("9 checkpoint round trip", identical,
           std::string("save→load→save ") + (identical ? "byte-identical" : "DIFFERS") + " for LP and FP (" +
               std::to_string(total) + " bytes)");
  }
}

// ---------------------------------------------------------------------------
// 7 & 8. Desk-scale comparison from finished runs
// ---------------------------------------------------------------------------

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string &name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
  double at(std::size_t row, const std::string &name) const {
    const int c = col(name);
    if (c < 0 || row >= rows.size() || static_cast<std::size_t>(c) >= rows[row].size() || rows[row][c].empty())
      throw std::runtime_error("missing value " + name);
    return std::stod(rows[row][c]);
  }
};

std::optional<Csv> read_csv(const fs::path &p) {
  std::ifstream in(p);
  if (!in) return std::nullopt;
  Csv csv;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (first) csv.header = cells;
    else csv.rows.push_back(cells);
    first = false;
  }
  return csv;
}

void desk_scale(const fs::path &dir) {
  constexpr int kSeeds = 3;
  constexpr int kEpochs = 60;
  std::vector<Csv> bwrf_runs, base_runs;
  std::vector<std::string> missing;
  for (int seed = 0; seed < kSeeds; ++seed) {
    for (const std::string arm : {"bwrf", "baseline"}) {
      const fs::path p = dir / (arm + "_seed" + std::to_string(seed)) / artifacts::metrics;
      auto csv = read_csv(p);
      if (!csv || static_cast<int>(csv->rows.size()) < kEpochs) {
        missing.push_back(p.string() + (csv ? " (" + std::to_string(csv->rows.size()) + " epochs)" : ""));
        continue;
      }
      (arm == "bwrf" ? bwrf_runs : base_runs).push_back(*csv);
    }
  }
  if (!missing.empty()) {
    std::string what = "no finished desk-scale results (needs CIFAR-10 and tools/desk_scale.sh); missing " +
                       std::to_string(missing.size()) + " of " + std::to_string(2 * kSeeds) + " runs, e.g. " +
                       missing.front();
    report("7 desk-scale BWRF vs baseline", false, what);
    report("8 similarity trend", false, what);
    return;
  }

  try {
    double mean_b = 0.0, mean_q = 0.0;
    int wins = 0;
    bool ordering = true;
    std::ostringstream per_seed;
    for (int s = 0; s < kSeeds; ++s) {
      const auto &b = bwrf_runs[s], &q = base_runs[s];
      const std::size_t last_b = b.rows.size() - 1, last_q = q.rows.size() - 1;
      const double acc_b = b.at(last_b, "acc_Q"), acc_q = q.at(last_q, "acc_Q");
      mean_b += acc_b / kSeeds;
      mean_q += acc_q / kSeeds;
      if (acc_b > acc_q) ++wins;
      const double f = b.at(last_b, "acc_F"), m1 = b.at(last_b, "acc_M1");
      if (!(f + 1.0 >= m1 && m1 + 1.0 >= acc_b)) ordering = false;
      per_seed << " seed" << s << " " << fmt("%.2f", acc_b) << "/" << fmt("%.2f", acc_q);
    }
    const bool pass7 = mean_b >= mean_q - 0.1 && wins >= 2 && ordering;
    report("7 desk-scale BWRF vs baseline", pass7,
           "mean top-1 BWRF " + fmt("%.2f", mean_b) + " vs baseline " + fmt("%.2f", mean_q) + ", wins " +
               std::to_string(wins) + "/3, F>=M1>=Q (1.0 slack) " + (ordering ? "holds" : "violated") + ";" +
               per_seed.str());

    bool rising = true;
    std::ostringstream d8;
    for (int s = 0; s < kSeeds; ++s) {
      const auto &b = bwrf_runs[s];
      for (int i = 1;; ++i) {
        const std::string name = "cos_QF" + std::to_string(i);
        if (b.col(name) < 0) {
          if (i == 1) throw std::runtime_error("BWRF runs carry no cos_QF columns (cos_every = 0)");
          break;
        }
        const double first = b.at(0, name), final = b.at(b.rows.size() - 1, name);
        if (!(final > first)) rising = false;
        if (s == 0) d8 << " block" << i << " " << fmt("%.4f", first) << "->" << fmt("%.4f", final);
      }
    }
    report("8 similarity trend", rising, std::string("cos(x_Q, x_F) final > epoch 1 on every block and seed: ") +
                                             (rising ? "yes" : "no") + ";" + d8.str() + " (seed 0)");
  } catch (const std::exception &e) {
    report("7 desk-scale BWRF vs baseline", false, std::string("malformed results: ") + e.what());
    report("8 similarity trend", false, std::string("malformed results: ") + e.what());
  }
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"acceptance criteria"};
  std::string workdir = (fs::temp_directory_path() / "bwrf_acceptance").string();
  std::string desk_dir;
  app.add_option("--workdir", workdir, "Scratch directory for end-to-end runs");
  app.add_option("--desk-scale", desk_dir, "Evaluate finished desk-scale runs under this directory");
  CLI11_PARSE(app, argc, argv);

  if (!desk_dir.empty()) {
    desk_scale(desk_dir);
    return failures == 0 ? 0 : 1;
  }

  quantizer_suite();
  autodiff_suite();
  graft_equivalence();
  gradient_decomposition();
  end_to_end(workdir);
  std::printf("[DEFERRED] criterion 7 desk-scale BWRF vs baseline: evaluated by `acceptance --desk-scale`\n");
  std::printf("[DEFERRED] criterion 8 similarity trend: evaluated by `acceptance --desk-scale`\n");
  std::printf("[NOT REPRODUCED] criterion 10 ImageNet and ResNet-34/50 results: out of scope by design\n");
  std::printf("%d failing criteria\n", failures);
  return failures == 0 ? 0 : 1;
}
