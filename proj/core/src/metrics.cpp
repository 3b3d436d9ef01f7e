// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#include "dmi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <unordered_set>

namespace dmi {

RankMetrics recall_hr_ndcg(std::span<const ItemId> retrieved, std::span<const ItemId> targets) {
  if (targets.empty()) throw UsageError("recall_hr_ndcg: empty target set");
  if (retrieved.empty()) throw UsageError("recall_hr_ndcg: empty retrieved list");
  const std::unordered_set<ItemId> truth(targets.begin(), targets.end());
  std::size_t hits = 0;
  double dcg = 0;
  for (std::size_t r = 0; r < retrieved.size(); ++r) {
    if (truth.contains(retrieved[r])) {
      ++hits;
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
  }
  double idcg = 0;
  const std::size_t ideal = std::min(retrieved.size(), truth.size());
  for (std::size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  RankMetrics m;
  m.recall = static_cast<double>(hits) / static_cast<double>(truth.size());
  m.hit_rate = hits > 0 ? 1.0 : 0.0;
  m.ndcg = dcg / idcg;
  return m;
}

std::size_t hamming(std::span<const std::uint8_t> x, std::span<const std::uint8_t> y) {
  if (x.size() != y.size())
    throw DimensionError("hamming: lengths " + std::to_string(x.size()) + " and " + std::to_string(y.size()));
  std::size_t d = 0;
  for (std::size_t i = 0; i < x.size(); ++i) d += x[i] != y[i];
  return d;
}

std::vector<std::uint8_t> multi_hot(const CategoryMap& cats, ItemId item) {
  std::vector<std::uint8_t> v(cats.num_categories(), 0);
  for (int c : cats.categories_of(item)) v[static_cast<std::size_t>(c)] = 1;
  return v;
}

double concentration(std::span<const ItemId> retrieved, const CategoryMap& cats) {
  const std::size_t n = retrieved.size();
  if (n < 2) throw UsageError("concentration needs at least two items");
  std::vector<std::vector<std::uint8_t>> codes;
  codes.reserve(n);
  for (ItemId i : retrieved) codes.push_back(multi_hot(cats, i));
  double total = 0;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = j + 1; k < n; ++k) total += static_cast<double>(hamming(codes[j], codes[k]));
  return total / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

double diversity_all(std::span<const ItemId> retrieved, const CategoryMap& cats) {
  const std::size_t n = retrieved.size();
  if (n < 2) throw UsageError("diversity_all needs at least two items");
  std::size_t differing = 0;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = j + 1; k < n; ++k)
      differing += cats.categories_of(retrieved[j]) != cats.categories_of(retrieved[k]);
  return static_cast<double>(differing) / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

std::size_t diversity_hit(std::span<const std::vector<ItemId>> hits_per_user, const CategoryMap& cats) {
  std::size_t total = 0;
  for (const auto& hits : hits_per_user) {
    std::unordered_set<int> seen;
    for (ItemId i : hits)
      for (int c : cats.categories_of(i)) seen.insert(c);
    total += seen.size();
  }
  return total;
}

MetricsReport aggregate_metrics(std::size_t top_n, std::span<const UserId> users,
                                std::span<const std::vector<ItemId>> ranked,
                                std::span<const std::vector<ItemId>> targets, const CategoryMap* cats,
                                bool keep_per_user) {
  if (users.size() != ranked.size() || users.size() != targets.size())
    throw DimensionError("aggregate_metrics: users, ranked lists and targets differ in count");
  MetricsReport report;
  report.top_n = top_n;
  double conc_sum = 0, div_sum = 0;
  std::size_t cat_users = 0;
  std::vector<std::vector<ItemId>> hits;
  for (std::size_t u = 0; u < users.size(); ++u) {
    if (targets[u].empty() || ranked[u].empty()) {
      ++report.skipped_users;
      continue;
    }
    const std::span<const ItemId> list(ranked[u].data(), std::min(top_n, ranked[u].size()));
    UserMetrics um;
    um.user = users[u];
    um.rank = recall_hr_ndcg(list, targets[u]);
    report.recall += um.rank.recall;
    report.hit_rate += um.rank.hit_rate;
    report.ndcg += um.rank.ndcg;
    ++report.users;
    if (cats != nullptr) {
      const std::unordered_set<ItemId> truth(targets[u].begin(), targets[u].end());
      std::vector<ItemId> user_hits;
      for (ItemId i : list) {
        if (truth.contains(i)) user_hits.push_back(i);
        if (cats->categories_of(i).empty()) ++report.items_without_category;
      }
      hits.push_back(std::move(user_hits));
      if (list.size() >= 2) {
        um.concentration = concentration(list, *cats);
        um.diversity_all = diversity_all(list, *cats);
        conc_sum += *um.concentration;
        div_sum += *um.diversity_all;
        ++cat_users;
      }
    }
    if (keep_per_user) report.per_user.push_back(um);
  }
  if (report.users > 0) {
    const auto n = static_cast<double>(report.users);
    report.recall /= n;
    report.hit_rate /= n;
    report.ndcg /= n;
  }
  if (cats != nullptr) {
    if (cat_users > 0) {
      report.concentration = conc_sum / static_cast<double>(cat_users);
      report.diversity_all = div_sum / static_cast<double>(cat_users);
    }
    report.diversity_hit = diversity_hit(hits, *cats);
  }
  return report;
}

void write_report(std::ostream& os, const MetricsReport& r) {
  const auto flags = os.flags();
  const auto precision = os.precision();
  os << std::setprecision(17);
  os << "n=" << r.top_n << '\n';
  os << "users=" << r.users << '\n';
  os << "skipped_users=" << r.skipped_users << '\n';
  os << "recall=" << r.recall << '\n';
  os << "hit_rate=" << r.hit_rate << '\n';
  os << "ndcg=" << r.ndcg << '\n';
  auto optional_line = [&](const char* name, const auto& value) {
    os << name << '=';
    if (value) {
      os << *value;
    } else {
      os << "absent";
    }
    os << '\n';
  };
  optional_line("concentration", r.concentration);
  optional_line("diversity_all", r.diversity_all);
  optional_line("diversity_hit", r.diversity_hit);
  if (r.diversity_hit) os << "items_without_category=" << r.items_without_category << '\n';
  os.flags(flags);
  os.precision(precision);
}

}  // namespace dmi
