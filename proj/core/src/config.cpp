// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#include "dmi/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dmi {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  // Accept 1e6-style integers, common in sweep files.
  if (v.find_first_of("eE.") != std::string::npos) {
    double d = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), d);
    if (ec != std::errc() || p != v.data() + v.size() || d < 0 || d != static_cast<double>(static_cast<std::uint64_t>(d)))
      bad_value(key, v, "a non-negative integer");
    return static_cast<std::uint64_t>(d);
  }
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "a boolean");
}

std::string fmt_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

struct Field {
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define DMI_SIZE_FIELD(name, member)                                                                              \
  {                                                                                                               \
    name, {                                                                                                       \
      [](RunConfig& c, const std::string& k, const std::string& v) { c.member = static_cast<std::size_t>(to_u64(k, v)); }, \
          [](const RunConfig& c) { return std::to_string(c.member); }                                             \
    }                                                                                                             \
  }
#define DMI_U64_FIELD(name, member)                                                                   \
  {                                                                                                   \
    name, {                                                                                           \
      [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_u64(k, v); },     \
          [](const RunConfig& c) { return std::to_string(c.member); }                                 \
    }                                                                                                 \
  }
#define DMI_DOUBLE_FIELD(name, member)                                                                \
  {                                                                                                   \
    name, {                                                                                           \
      [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_double(k, v); },  \
          [](const RunConfig& c) { return fmt_double(c.member); }                                     \
    }                                                                                                 \
  }
#define DMI_BOOL_FIELD(name, member)                                                                  \
  {                                                                                                   \
    name, {                                                                                           \
      [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); },    \
          [](const RunConfig& c) { return fmt_bool(c.member); }                                       \
    }                                                                                                 \
  }
#define DMI_STRING_FIELD(name, member)                                                               \
  {                                                                                                  \
    name, {                                                                                          \
      [](RunConfig& c, const std::string&, const std::string& v) { c.member = v; },                 \
          [](const RunConfig& c) { return c.member; }                                                \
    }                                                                                                \
  }

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      DMI_STRING_FIELD("ablation", ablation),
      DMI_U64_FIELD("seed", seed),
      DMI_STRING_FIELD("data.path", data_path),
      DMI_STRING_FIELD("data.categories", categories_path),
      DMI_SIZE_FIELD("data.filter_min", ingest.filter_min),
      DMI_SIZE_FIELD("data.max_seq_len", ingest.max_seq_len),
      DMI_BOOL_FIELD("data.dedupe", ingest.dedupe),
      DMI_SIZE_FIELD("model.d", model.extractor.dim),
      DMI_SIZE_FIELD("model.d_a", model.extractor.attn_dim),
      DMI_SIZE_FIELD("model.K", model.extractor.interests),
      DMI_SIZE_FIELD("diffusion.T", model.steps),
      DMI_DOUBLE_FIELD("diffusion.s", model.noise_scale),
      DMI_DOUBLE_FIELD("diffusion.alpha_min", model.alpha_min),
      DMI_DOUBLE_FIELD("diffusion.alpha_max", model.alpha_max),
      DMI_SIZE_FIELD("diffusion.heads", model.heads),
      DMI_SIZE_FIELD("diffusion.ff_dim", model.ff_dim),
      DMI_BOOL_FIELD("diffusion.transformer", model.use_transformer),
      DMI_BOOL_FIELD("diffusion.enabled", model.refine.use_diffusion),
      DMI_DOUBLE_FIELD("diffusion.eta", model.refine.eta),
      DMI_DOUBLE_FIELD("diffusion.gamma", model.refine.gamma),
      DMI_BOOL_FIELD("diffusion.pruning", model.refine.use_pruning),
      DMI_BOOL_FIELD("diffusion.detach_v0", model.refine.detach_v0),
      DMI_BOOL_FIELD("diffusion.detach_context", model.refine.detach_context),
      DMI_SIZE_FIELD("train.batch_size", train.batch_size),
      DMI_SIZE_FIELD("train.n_neg", train.n_neg),
      DMI_DOUBLE_FIELD("train.lr", train.lr),
      DMI_DOUBLE_FIELD("train.lambda", train.lambda),
      DMI_U64_FIELD("train.max_iterations", train.max_iterations),
      DMI_U64_FIELD("train.eval_every", train.eval_every),
      DMI_U64_FIELD("train.patience", train.patience),
      {"train.target_policy",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "uniform") {
            c.train.target_policy = TargetPolicy::kUniform;
          } else if (v == "last") {
            c.train.target_policy = TargetPolicy::kLast;
          } else {
            bad_value(k, v, "uniform|last");
          }
        },
        [](const RunConfig& c) {
          return std::string(c.train.target_policy == TargetPolicy::kLast ? "last" : "uniform");
        }}},
      {"eval.N",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          std::vector<std::size_t> out;
          std::stringstream ss(v);
          std::string part;
          while (std::getline(ss, part, ',')) {
            const std::size_t n = static_cast<std::size_t>(to_u64(k, trim(part)));
            if (n == 0) bad_value(k, v, "a list of positive integers");
            out.push_back(n);
          }
          if (out.empty()) bad_value(k, v, "a list of positive integers");
          c.eval_cutoffs = std::move(out);
        },
        [](const RunConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.eval_cutoffs.size(); ++i) s += (i ? "," : "") + std::to_string(c.eval_cutoffs[i]);
          return s;
        }}},
      {"eval.split",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          try {
            c.eval_split = parse_split(v);
          } catch (const std::exception&) {
            bad_value(k, v, "train|valid|test");
          }
        },
        [](const RunConfig& c) { return std::string(to_string(c.eval_split)); }}},
      DMI_BOOL_FIELD("eval.deterministic_eps0", deterministic_eps0),
      DMI_BOOL_FIELD("eval.exclude_history", exclude_history),
      DMI_SIZE_FIELD("eval.threads", threads),
      DMI_STRING_FIELD("output.dir", output_dir),
  };
  return table;
}

#undef DMI_SIZE_FIELD
#undef DMI_U64_FIELD
#undef DMI_DOUBLE_FIELD
#undef DMI_BOOL_FIELD
#undef DMI_STRING_FIELD

const Field* find_field(const std::string& key) {
  for (const auto& [name, f] : fields())
    if (name == key) return &f;
  return nullptr;
}

std::pair<std::string, std::string> split_assignment(std::string_view line, const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
  std::string key = trim(line.substr(0, eq));
  if (key.empty()) throw ConfigError(where + ": empty key");
  return {std::move(key), trim(line.substr(eq + 1))};
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, f] : fields()) k.push_back(name);
    return k;
  }();
  return keys;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (f == nullptr) throw ConfigError("unknown config key '" + key + "'");
  f->set(cfg, key, value);
}

void apply_ablation(RunConfig& cfg) {
  RefineConfig& r = cfg.model.refine;
  if (cfg.ablation == "dmi") return;
  if (cfg.ablation == "dmi-diff") {
    r.use_diffusion = false;
    cfg.train.lambda = 0.0;
  } else if (cfg.ablation == "dmi-t") {
    cfg.model.use_transformer = false;
  } else if (cfg.ablation == "dmi-ip") {
    r.use_pruning = false;
  } else if (cfg.ablation == "dmi-gd") {
    r.detach_v0 = false;
    r.detach_context = false;
  } else {
    throw ConfigError("config key 'ablation': unknown preset '" + cfg.ablation +
                      "' (expected dmi, dmi-diff, dmi-t, dmi-ip or dmi-gd)");
  }
}

RunConfig parse_run_config(std::string_view text, const std::vector<std::string>& overrides, const std::string& source) {
  RunConfig cfg;
  std::map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    auto [key, value] = split_assignment(line, where);
    if (find_field(key) == nullptr) throw ConfigError(where + ": unknown config key '" + key + "'");
    if (seen.contains(key))
      throw ConfigError(where + ": duplicate config key '" + key + "' (first set on line " +
                        std::to_string(seen[key]) + ")");
    seen[key] = line_no;
    set_config_value(cfg, key, value);
  }
  for (const std::string& o : overrides) {
    auto [key, value] = split_assignment(o, "--set " + o);
    set_config_value(cfg, key, value);
  }
  apply_ablation(cfg);
  cfg.train.seed = cfg.seed;
  cfg.train.eval_threads = cfg.threads;
  cfg.train.eval_deterministic_eps0 = cfg.deterministic_eps0;
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), overrides, path.string());
}

std::string format_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + " = " + f.get(cfg) + "\n";
  return out;
}

void require_data_path(const RunConfig& cfg) {
  if (cfg.data_path.empty()) throw ConfigError("missing required config key 'data.path'");
}

}  // namespace dmi
