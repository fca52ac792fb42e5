#include "bwrf/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "bwrf/network.hpp"

namespace bwrf {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string &key, const std::string &text) {
  T value{};
  const char *first = text.data(), *last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) throw ConfigError("config: '" + key + "' expects a number, got '" + text + "'");
  return value;
}

bool parse_bool(const std::string &key, const std::string &text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError("config: '" + key + "' expects a boolean, got '" + text + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string &key, const std::string &text) {
  std::vector<T> out;
  if (trim(text).empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
  return out;
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
std::string format_list(const std::vector<T> &values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + format_number(values[i]);
  return out;
}

std::string format_bool(bool b) { return b ? "true" : "false"; }

struct Field {
  std::function<void(RunConfig &, const std::string &key, const std::string &)> set;
  std::function<std::string(const RunConfig &)> get;
};

template <typename T>
Field number(T RunConfig::*member) {
  return {[member](RunConfig &c, const std::string &k, const std::string &v) { c.*member = parse_number<T>(k, v); },
          [member](const RunConfig &c) { return format_number(c.*member); }};
}

template <typename T>
Field list(std::vector<T> RunConfig::*member) {
  return {[member](RunConfig &c, const std::string &k, const std::string &v) { c.*member = parse_list<T>(k, v); },
          [member](const RunConfig &c) { return format_list(c.*member); }};
}

Field boolean(bool RunConfig::*member) {
  return {[member](RunConfig &c, const std::string &k, const std::string &v) { c.*member = parse_bool(k, v); },
          [member](const RunConfig &c) { return format_bool(c.*member); }};
}

Field text(std::string RunConfig::*member) {
  return {[member](RunConfig &c, const std::string &, const std::string &v) { c.*member = v; },
          [member](const RunConfig &c) { return c.*member; }};
}

const std::vector<std::pair<std::string, Field>> &fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"arch", text(&RunConfig::arch)},
      {"width", number(&RunConfig::width)},
      {"n_blocks", number(&RunConfig::n_blocks)},
      {"bits", number(&RunConfig::bits)},
      {"alpha", list(&RunConfig::alpha)},
      {"temperature", number(&RunConfig::temperature)},
      {"use_mp_targets", boolean(&RunConfig::use_mp_targets)},
      {"use_fp_kd", boolean(&RunConfig::use_fp_kd)},
      {"use_mp_kd", boolean(&RunConfig::use_mp_kd)},
      {"use_avg_labels", boolean(&RunConfig::use_avg_labels)},
      {"branches", list(&RunConfig::branches)},
      {"lr", number(&RunConfig::lr)},
      {"weight_decay", number(&RunConfig::weight_decay)},
      {"momentum", number(&RunConfig::momentum)},
      {"scale_lr_multiplier", number(&RunConfig::scale_lr_multiplier)},
      {"grad_scale", boolean(&RunConfig::grad_scale)},
      {"epochs", number(&RunConfig::epochs)},
      {"milestones", list(&RunConfig::milestones)},
      {"lr_decay", number(&RunConfig::lr_decay)},
      {"batch_size", number(&RunConfig::batch_size)},
      {"seed", number(&RunConfig::seed)},
      {"augment", boolean(&RunConfig::augment)},
      {"dataset", text(&RunConfig::dataset)},
      {"data_dir", text(&RunConfig::data_dir)},
      {"subset", number(&RunConfig::subset)},
      {"test_subset", number(&RunConfig::test_subset)},
      {"norm_mean", list(&RunConfig::norm_mean)},
      {"norm_std", list(&RunConfig::norm_std)},
      {"fp_checkpoint", text(&RunConfig::fp_checkpoint)},
      {"lp_checkpoint", text(&RunConfig::lp_checkpoint)},
      {"output_dir", text(&RunConfig::output_dir)},
      {"cos_every", number(&RunConfig::cos_every)},
      {"cos_samples", number(&RunConfig::cos_samples)},
  };
  return table;
}

const Field &field(const std::string &key) {
  for (const auto &[name, f] : fields())
    if (name == key) return f;
  throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace

const std::vector<std::string> &RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto &[name, f] : fields()) out.push_back(name);
    return out;
  }();
  return names;
}

void RunConfig::set(const std::string &key, const std::string &value) { field(key).set(*this, key, value); }

void RunConfig::apply_override(const std::string &assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(std::string_view(assignment).substr(0, eq)), trim(std::string_view(assignment).substr(eq + 1)));
}

void RunConfig::validate() const {
  try {
    BlockSpec spec = BlockSpec::parse(arch);
    spec.base_width = width;
    spec.validate();
    if (n_blocks != spec.n_blocks())
      throw ConfigError("n_blocks = " + std::to_string(n_blocks) + " but " + arch + " has " +
                        std::to_string(spec.n_blocks()) + " resolution stages");
  } catch (const std::invalid_argument &e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!supported_bits(bits)) throw ConfigError("config: bits must be one of 2, 3, 4, 8, 32");
  if (alpha.size() > 1 && static_cast<int>(alpha.size()) != n_blocks - 1)
    throw ConfigError("config: alpha needs 1 or n_blocks-1 values");
  for (float a : alpha)
    if (!(a >= 0.0f)) throw ConfigError("config: alpha must be non-negative");
  for (int k : branches)
    if (k < 1 || k >= n_blocks) throw ConfigError("config: branch " + std::to_string(k) + " out of range");
  if (!(temperature > 0.0f)) throw ConfigError("config: temperature must be positive");
  if (!(lr > 0.0f)) throw ConfigError("config: lr must be positive");
  if (weight_decay < 0.0f || momentum < 0.0f) throw ConfigError("config: weight_decay and momentum must be >= 0");
  if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
  for (std::size_t i = 0; i < milestones.size(); ++i)
    if ((i && milestones[i] <= milestones[i - 1]) || milestones[i] < 0)
      throw ConfigError("config: milestones must be strictly increasing");
  if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (dataset != "cifar10" && dataset != "idx") throw ConfigError("config: dataset must be cifar10 or idx");
  if (!(subset > 0.0 && subset <= 1.0) || !(test_subset > 0.0 && test_subset <= 1.0))
    throw ConfigError("config: subset fractions must be in (0, 1]");
  if (norm_mean.size() != norm_std.size()) throw ConfigError("config: norm_mean and norm_std lengths differ");
  for (float s : norm_std)
    if (!(s > 0.0f)) throw ConfigError("config: norm_std must be positive");
  if (cos_every < 0 || cos_samples < 1) throw ConfigError("config: cos_every >= 0 and cos_samples >= 1 required");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto &[name, f] : fields()) out += name + " = " + f.get(*this) + "\n";
  return out;
}

RunConfig RunConfig::parse(const std::string &text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    try {
      cfg.set(trim(std::string_view(body).substr(0, eq)), trim(std::string_view(body).substr(eq + 1)));
    } catch (const ConfigError &e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RunConfig::save(const std::filesystem::path &path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << to_text();
}

}  // namespace bwrf
