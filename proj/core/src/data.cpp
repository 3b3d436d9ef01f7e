// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#include "dmi/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dmi {
namespace {

std::uint64_t token_digest(const std::vector<std::string>& tokens) {
  std::uint64_t h = kFnvOffset;
  for (const std::string& t : tokens) {
    for (unsigned char ch : t) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;  // separator
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return fields;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kValid:
      return "valid";
    case Split::kTest:
      return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "valid") return Split::kValid;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + name + "' (expected train, valid or test)");
}

std::size_t Dataset::num_interactions() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.size();
  return n;
}

std::vector<UserId> Dataset::users_in(Split s) const {
  std::vector<UserId> out;
  for (std::size_t u = 0; u < splits.size(); ++u)
    if (splits[u] == s) out.push_back(static_cast<UserId>(u));
  return out;
}

std::uint64_t Dataset::item_digest() const { return token_digest(item_tokens); }
std::uint64_t Dataset::user_digest() const { return token_digest(user_tokens); }

std::vector<InteractionRecord> read_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interaction log " + path.string());
  std::vector<InteractionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_tabs(line);
    auto fail = [&](const std::string& why) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() != 3) fail("expected 3 tab-separated fields, got " + std::to_string(fields.size()));
    if (fields[0].empty() || fields[1].empty()) fail("empty user or item id");
    std::int64_t ts = 0;
    const auto ts_field = fields[2];
    const auto [ptr, ec] = std::from_chars(ts_field.data(), ts_field.data() + ts_field.size(), ts);
    if (ec != std::errc() || ptr != ts_field.data() + ts_field.size()) fail("timestamp is not an integer");
    records.push_back({std::string(fields[0]), std::string(fields[1]), ts});
  }
  if (in.bad()) throw DataError("read error on " + path.string());
  return records;
}

Dataset build_dataset(const std::vector<InteractionRecord>& records, const IngestOptions& options) {
  if (options.max_seq_len == 0) throw ConfigError("max_seq_len must be positive");

  // Group by user in file order, then stable-sort each group by time.
  std::unordered_map<std::string, std::size_t> user_slot;
  std::vector<std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto [it, inserted] = user_slot.try_emplace(records[i].user, by_user.size());
    if (inserted) by_user.emplace_back();
    by_user[it->second].push_back(i);
  }
  for (auto& group : by_user) {
    std::stable_sort(group.begin(), group.end(),
                     [&](std::size_t a, std::size_t b) { return records[a].timestamp < records[b].timestamp; });
    if (options.dedupe) {
      auto last = std::unique(group.begin(), group.end(),
                              [&](std::size_t a, std::size_t b) { return records[a].item == records[b].item; });
      group.erase(last, group.end());
    }
  }

  std::vector<bool> alive(records.size(), false);
  for (const auto& group : by_user)
    for (std::size_t i : group) alive[i] = true;

  // Alternate item and user passes until neither removes anything.
  const std::size_t min_count = std::max<std::size_t>(options.filter_min, 1);
  // Users need a (history, target) pair, so fewer than two items drops them too.
  const std::size_t min_user = std::max<std::size_t>(min_count, 2);
  for (bool changed = true; changed;) {
    changed = false;
    std::unordered_map<std::string_view, std::size_t> item_count;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (alive[i]) ++item_count[records[i].item];
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (alive[i] && item_count[records[i].item] < min_count) {
        alive[i] = false;
        changed = true;
      }
    }
    for (const auto& group : by_user) {
      const auto n = static_cast<std::size_t>(std::count_if(group.begin(), group.end(), [&](std::size_t i) { return alive[i]; }));
      if (n > 0 && n < min_user) {
        for (std::size_t i : group) alive[i] = false;
        changed = true;
      }
    }
  }

  Dataset ds;
  ds.max_seq_len = options.max_seq_len;
  ds.item_tokens.emplace_back("<pad>");

  // Users keep file order of first appearance; items are numbered by first
  // appearance in the file among surviving records.
  std::vector<std::size_t> user_order(by_user.size());
  std::iota(user_order.begin(), user_order.end(), 0);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!alive[i]) continue;
    if (ds.item_index.try_emplace(records[i].item, static_cast<ItemId>(ds.item_tokens.size())).second)
      ds.item_tokens.push_back(records[i].item);
  }
  for (std::size_t slot : user_order) {
    std::vector<ItemId> seq;
    for (std::size_t i : by_user[slot])
      if (alive[i]) seq.push_back(ds.item_index.at(records[i].item));
    if (seq.size() < 2) continue;
    const std::string& token = records[by_user[slot].front()].user;
    ds.user_index.emplace(token, static_cast<UserId>(ds.user_tokens.size()));
    ds.user_tokens.push_back(token);
    ds.sequences.push_back(std::move(seq));
  }
  if (ds.sequences.empty()) throw DataError("dataset is empty after filtering");
  ds.splits.assign(ds.sequences.size(), Split::kTrain);
  return ds;
}

Dataset ingest(const std::filesystem::path& path, const IngestOptions& options) {
  return build_dataset(read_interactions(path), options);
}

void split_users(Dataset& ds, std::uint64_t seed) {
  const std::size_t n = ds.num_users();
  if (n < 10) throw ConfigError("split_users needs at least 10 users, have " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng = CounterRng(seed).substream(0x5b117);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_valid = n / 10;
  ds.splits.assign(n, Split::kTest);
  for (std::size_t i = 0; i < n_train; ++i) ds.splits[order[i]] = Split::kTrain;
  for (std::size_t i = n_train; i < n_train + n_valid; ++i) ds.splits[order[i]] = Split::kValid;
}

Batch next_train_batch(const Dataset& ds, std::size_t batch_size, std::size_t n_neg, CounterRng& rng,
                       TargetPolicy policy) {
  const std::vector<UserId> pool = ds.users_in(Split::kTrain);
  if (pool.empty()) throw UsageError("next_train_batch: train split is empty");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  Batch b;
  b.batch_size = batch_size;
  b.seq_len = ds.max_seq_len;
  b.histories.assign(batch_size * b.seq_len, kPaddingItem);
  b.mask.assign(batch_size * b.seq_len, 0);
  for (std::size_t row = 0; row < batch_size; ++row) {
    const UserId user = pool[rng.below(pool.size())];
    const auto& seq = ds.sequences[static_cast<std::size_t>(user)];
    // 0-based target index in [1, n-1]
    const std::size_t target =
        policy == TargetPolicy::kLast ? seq.size() - 1 : 1 + rng.below(seq.size() - 1);
    const std::size_t begin = target > b.seq_len ? target - b.seq_len : 0;
    const std::size_t len = target - begin;
    for (std::size_t j = 0; j < len; ++j) {
      b.histories[row * b.seq_len + j] = seq[begin + j];
      b.mask[row * b.seq_len + j] = 1;
    }
    b.lengths.push_back(len);
    b.targets.push_back(seq[target]);
    b.users.push_back(user);
  }
  b.negatives.reserve(n_neg);
  for (std::size_t i = 0; i < n_neg; ++i) b.negatives.push_back(static_cast<ItemId>(1 + rng.below(ds.num_items())));
  return b;
}

std::vector<EvalExample> eval_examples(const Dataset& ds, Split split) {
  std::vector<EvalExample> out;
  for (UserId u : ds.users_in(split)) {
    const auto& seq = ds.sequences[static_cast<std::size_t>(u)];
    const std::size_t cut = seq.size() * 8 / 10;
    if (cut == 0 || cut >= seq.size()) continue;
    EvalExample ex;
    ex.user = u;
    const std::size_t begin = cut > ds.max_seq_len ? cut - ds.max_seq_len : 0;
    ex.history.assign(seq.begin() + static_cast<std::ptrdiff_t>(begin), seq.begin() + static_cast<std::ptrdiff_t>(cut));
    ex.targets.assign(seq.begin() + static_cast<std::ptrdiff_t>(cut), seq.end());
    out.push_back(std::move(ex));
  }
  return out;
}

SynthResult synth_generate(const SynthConfig& cfg) {
  if (cfg.n_clusters < 2) throw ConfigError("synth: need at least 2 clusters");
  if (cfg.n_items < cfg.n_clusters)
    throw ConfigError("synth: n_items (" + std::to_string(cfg.n_items) + ") < n_clusters (" +
                      std::to_string(cfg.n_clusters) + ")");
  if (cfg.n_users == 0) throw ConfigError("synth: n_users must be positive");
  if (cfg.min_preferred == 0 || cfg.min_preferred > cfg.max_preferred)
    throw ConfigError("synth: need 1 <= min_preferred <= max_preferred");
  if (cfg.min_length < 2 || cfg.min_length > cfg.max_length)
    throw ConfigError("synth: need 2 <= min_length <= max_length");

  const std::size_t C = cfg.n_clusters;
  CounterRng rng(cfg.seed);
  CounterRng vec_rng = rng.substream(1);
  CounterRng seq_rng = rng.substream(2);

  // Generator item j belongs to cluster j % C with within-cluster rank j / C.
  std::vector<std::vector<std::size_t>> members(C);
  for (std::size_t j = 0; j < cfg.n_items; ++j) members[j % C].push_back(j);
  std::vector<std::vector<double>> cdf(C);
  for (std::size_t c = 0; c < C; ++c) {
    double acc = 0;
    for (std::size_t r = 0; r < members[c].size(); ++r) {
      acc += 1.0 / std::pow(static_cast<double>(r + 1), cfg.zipf_exponent);
      cdf[c].push_back(acc);
    }
    for (double& x : cdf[c]) x /= acc;
  }
  auto draw_from = [&](std::size_t c) {
    const double u = seq_rng.uniform();
    const auto it = std::upper_bound(cdf[c].begin(), cdf[c].end(), u);
    const auto r = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cdf[c].begin(), static_cast<std::ptrdiff_t>(cdf[c].size()) - 1));
    return members[c][r];
  };

  auto item_token = [](std::size_t j) { return "i" + std::to_string(j); };
  SynthResult result;
  std::vector<std::vector<int>> user_prefs(cfg.n_users);
  const std::size_t max_pref = std::min(cfg.max_preferred, C);
  const std::size_t min_pref = std::min(cfg.min_preferred, max_pref);
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    std::vector<int> all(C);
    std::iota(all.begin(), all.end(), 0);
    const std::size_t k = min_pref + seq_rng.below(max_pref - min_pref + 1);
    for (std::size_t i = 0; i < k; ++i) std::swap(all[i], all[i + seq_rng.below(C - i)]);
    std::vector<int> prefs(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
    const std::size_t len = cfg.min_length + seq_rng.below(cfg.max_length - cfg.min_length + 1);
    std::size_t current = static_cast<std::size_t>(prefs[seq_rng.below(k)]);
    const std::string user = "u" + std::to_string(u);
    for (std::size_t t = 0; t < len; ++t) {
      std::size_t j;
      if (seq_rng.uniform() >= cfg.focus) {
        j = seq_rng.below(cfg.n_items);
      } else {
        if (k > 1 && seq_rng.uniform() < cfg.switch_prob) current = static_cast<std::size_t>(prefs[seq_rng.below(k)]);
        j = draw_from(current);
      }
      result.records.push_back({user, item_token(j), static_cast<std::int64_t>(t)});
    }
    std::sort(prefs.begin(), prefs.end());
    user_prefs[u] = std::move(prefs);
  }

  result.dataset = build_dataset(result.records, {.filter_min = 1, .max_seq_len = 20, .dedupe = false});
  const Dataset& ds = result.dataset;

  SynthTruth& truth = result.truth;
  truth.vector_dim = C + cfg.noise_dims;
  truth.item_cluster.assign(ds.num_items() + 1, -1);
  truth.item_vectors.assign((ds.num_items() + 1) * truth.vector_dim, 0.0f);
  for (std::size_t j = 0; j < cfg.n_items; ++j) {
    // noise coordinates are drawn for every generator item so the stream
    // does not depend on which items were sampled
    std::vector<float> noise(cfg.noise_dims);
    for (float& x : noise) x = static_cast<float>(vec_rng.normal(0.0, 0.1));
    const auto it = ds.item_index.find(item_token(j));
    if (it == ds.item_index.end()) continue;
    const auto id = static_cast<std::size_t>(it->second);
    truth.item_cluster[id] = static_cast<int>(j % C);
    float* v = truth.item_vectors.data() + id * truth.vector_dim;
    v[j % C] = 1.0f;
    std::copy(noise.begin(), noise.end(), v + C);
  }
  truth.user_clusters.resize(ds.num_users());
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    const auto it = ds.user_index.find("u" + std::to_string(u));
    if (it != ds.user_index.end()) truth.user_clusters[static_cast<std::size_t>(it->second)] = user_prefs[u];
  }
  return result;
}

const std::vector<int>& CategoryMap::categories_of(ItemId item) const {
  static const std::vector<int> empty;
  const auto i = static_cast<std::size_t>(item);
  return i < item_categories.size() ? item_categories[i] : empty;
}

CategoryMap load_categories(const std::filesystem::path& path, const Dataset& ds) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open category file " + path.string());
  CategoryMap map;
  map.item_categories.assign(ds.num_items() + 1, {});
  std::unordered_map<std::string, int> vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_tabs(line);
    if (fields.size() > 2 || fields[0].empty())
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected item<TAB>categories");
    const auto it = ds.item_index.find(std::string(fields[0]));
    if (it == ds.item_index.end()) {
      ++map.unknown_items;
      continue;
    }
    auto& cats = map.item_categories[static_cast<std::size_t>(it->second)];
    if (fields.size() == 2) {
      std::string_view rest = fields[1];
      while (!rest.empty()) {
        const std::size_t comma = rest.find(',');
        const std::string name(rest.substr(0, comma));
        rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
        if (name.empty()) continue;
        const auto [slot, inserted] = vocab.try_emplace(name, static_cast<int>(map.vocabulary.size()));
        if (inserted) map.vocabulary.push_back(name);
        cats.push_back(slot->second);
      }
    }
    std::sort(cats.begin(), cats.end());
    cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
  }
  return map;
}

void write_interactions(const std::filesystem::path& path, const std::vector<InteractionRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : records) out << r.user << '\t' << r.item << '\t' << r.timestamp << '\n';
  if (!out) throw DataError("write error on " + path.string());
}

}  // namespace dmi
