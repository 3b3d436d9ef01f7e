// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: ingest, train, eval, retrieve, synth, inspect.
//
// Exit codes: 0 success, 1 unexpected failure, 2 config error, 3 data or
// checkpoint error, 4 numeric failure, 64 bad command line.

#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dmi/checkpoint.hpp"
#include "dmi/config.hpp"
#include "dmi/data.hpp"
#include "dmi/metrics.hpp"
#include "dmi/retrieval.hpp"
#include "dmi/training.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

dmi::RunConfig resolve(const CommonArgs& args) {
  if (args.config_path.empty()) return dmi::parse_run_config("", args.overrides, "<defaults>");
  return dmi::load_run_config(args.config_path, args.overrides);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw dmi::DataError("cannot write " + path.string());
  out << text;
}

dmi::Dataset load_dataset(const dmi::RunConfig& cfg) {
  dmi::require_data_path(cfg);
  dmi::Dataset ds = dmi::ingest(cfg.data_path, cfg.ingest);
  dmi::split_users(ds, cfg.seed);
  return ds;
}

std::vector<dmi::UserId> parse_user_tokens(const dmi::Dataset& ds, const std::string& list) {
  std::vector<dmi::UserId> out;
  std::stringstream ss(list);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto it = ds.user_index.find(tok);
    if (it == ds.user_index.end()) throw dmi::DataError("unknown user '" + tok + "'");
    out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_ingest(const CommonArgs& args, const std::string& out_dir) {
  const dmi::RunConfig cfg = resolve(args);
  const dmi::Dataset ds = load_dataset(cfg);
  fs::create_directories(out_dir);
  std::ostringstream items, users;
  for (std::size_t i = 1; i < ds.item_tokens.size(); ++i) items << i << '\t' << ds.item_tokens[i] << '\n';
  for (std::size_t u = 0; u < ds.user_tokens.size(); ++u)
    users << u << '\t' << ds.user_tokens[u] << '\t' << dmi::to_string(ds.splits[u]) << '\t' << ds.sequences[u].size()
          << '\n';
  write_text(fs::path(out_dir) / "items.tsv", items.str());
  write_text(fs::path(out_dir) / "users.tsv", users.str());
  std::ostringstream stats;
  stats << "users=" << ds.num_users() << '\n'
        << "items=" << ds.num_items() << '\n'
        << "interactions=" << ds.num_interactions() << '\n'
        << "train_users=" << ds.users_in(dmi::Split::kTrain).size() << '\n'
        << "valid_users=" << ds.users_in(dmi::Split::kValid).size() << '\n'
        << "test_users=" << ds.users_in(dmi::Split::kTest).size() << '\n'
        << "item_digest=" << std::hex << ds.item_digest() << '\n'
        << "user_digest=" << ds.user_digest() << '\n';
  write_text(fs::path(out_dir) / "stats.txt", stats.str());
  write_text(fs::path(out_dir) / "resolved_config.txt", dmi::format_run_config(cfg));
  std::cout << stats.str();
  return 0;
}

int cmd_train(const CommonArgs& args, bool resume) {
  const dmi::RunConfig cfg = resolve(args);
  const dmi::Dataset ds = load_dataset(cfg);
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  write_text(out / "resolved_config.txt", dmi::format_run_config(cfg));

  dmi::Checkpoint ckpt;
  if (resume && fs::exists(out / "last.ckpt")) {
    ckpt = dmi::load_checkpoint(out / "last.ckpt");
    std::cerr << "resuming at iteration " << ckpt.state.iteration << '\n';
  } else {
    ckpt = dmi::init_checkpoint(ds, cfg.model, cfg.train);
  }
  dmi::FitOptions opts;
  opts.out_dir = out;
  opts.on_eval = [](const dmi::FitLogEntry& e) {
    std::cerr << "iter " << e.iteration << "  L=" << e.losses.total << "  L_S=" << e.losses.rec
              << "  L_dm=" << e.losses.recon << "  valid_recall@50=" << e.valid_recall << '\n';
  };
  const dmi::Checkpoint best = dmi::fit(ds, ckpt, opts);
  std::cout << "best_iteration=" << best.state.best_iteration << '\n'
            << "best_valid_recall@50=" << std::setprecision(17) << best.state.best_recall << '\n'
            << "checkpoint=" << (out / "best.ckpt").string() << '\n';
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& ckpt_path, const std::string& split_name) {
  dmi::RunConfig cfg = resolve(args);
  if (!split_name.empty()) cfg.eval_split = dmi::parse_split(split_name);
  const dmi::Dataset ds = load_dataset(cfg);
  const dmi::Checkpoint ckpt = dmi::load_checkpoint(ckpt_path);
  dmi::check_compatible(ckpt, ds);

  std::optional<dmi::CategoryMap> cats;
  if (!cfg.categories_path.empty()) cats = dmi::load_categories(cfg.categories_path, ds);

  dmi::EvalOptions opts;
  opts.cutoffs = cfg.eval_cutoffs;
  opts.inference.seed = cfg.seed;
  opts.inference.deterministic_eps0 = cfg.deterministic_eps0;
  opts.exclude_history = cfg.exclude_history;
  opts.threads = cfg.threads;
  opts.categories = cats ? &*cats : nullptr;
  const auto reports = dmi::evaluate_split(ckpt.model, ds, cfg.eval_split, opts);

  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  write_text(out / "resolved_config.txt", dmi::format_run_config(cfg));
  const std::string split = dmi::to_string(cfg.eval_split);
  std::ostringstream table;
  table << "split\tN\tusers\trecall\thit_rate\tndcg\tconcentration\tdiversity_all\tdiversity_hit\n";
  table << std::setprecision(17);
  for (const auto& r : reports) {
    std::ostringstream text;
    dmi::write_report(text, r);
    write_text(out / ("report_" + split + "@" + std::to_string(r.top_n) + ".txt"), text.str());
    std::cout << "# " << split << " @" << r.top_n << '\n' << text.str();
    auto opt = [](const auto& v) {
      std::ostringstream os;
      os << std::setprecision(17);
      if (v) {
        os << *v;
      } else {
        os << "absent";
      }
      return os.str();
    };
    table << split << '\t' << r.top_n << '\t' << r.users << '\t' << r.recall << '\t' << r.hit_rate << '\t' << r.ndcg
          << '\t' << opt(r.concentration) << '\t' << opt(r.diversity_all) << '\t' << opt(r.diversity_hit) << '\n';
  }
  write_text(out / ("report_" + split + ".tsv"), table.str());
  return 0;
}

int cmd_retrieve(const CommonArgs& args, const std::string& ckpt_path, const std::string& users_arg,
                 const std::string& split_name, std::size_t n, const std::string& out_path) {
  dmi::RunConfig cfg = resolve(args);
  if (!split_name.empty()) cfg.eval_split = dmi::parse_split(split_name);
  const dmi::Dataset ds = load_dataset(cfg);
  const dmi::Checkpoint ckpt = dmi::load_checkpoint(ckpt_path);
  dmi::check_compatible(ckpt, ds);

  std::vector<dmi::EvalExample> examples = dmi::eval_examples(ds, cfg.eval_split);
  if (!users_arg.empty()) {
    std::vector<dmi::EvalExample> chosen;
    for (dmi::UserId u : parse_user_tokens(ds, users_arg)) {
      // Any user may be queried; the history is the most recent window.
      const auto& seq = ds.sequences[static_cast<std::size_t>(u)];
      dmi::EvalExample ex;
      ex.user = u;
      const std::size_t start = seq.size() > ds.max_seq_len ? seq.size() - ds.max_seq_len : 0;
      ex.history.assign(seq.begin() + static_cast<std::ptrdiff_t>(start), seq.end());
      chosen.push_back(std::move(ex));
    }
    examples = std::move(chosen);
  }

  dmi::InferenceOptions inf;
  inf.seed = cfg.seed;
  inf.deterministic_eps0 = cfg.deterministic_eps0;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path, std::ios::trunc);
    if (!file) throw dmi::DataError("cannot write " + out_path);
  }
  std::ostream& os = out_path.empty() ? std::cout : file;
  os << std::setprecision(9);
  for (const auto& ex : examples) {
    const dmi::Tensor z = dmi::user_vectors(ckpt.model, ex.history, ex.user, inf);
    const std::span<const dmi::ItemId> exclude =
        cfg.exclude_history ? std::span<const dmi::ItemId>(ex.history) : std::span<const dmi::ItemId>();
    const dmi::RetrievalResult r = dmi::topn(z, ckpt.model.extractor.embeddings, n, exclude);
    os << ds.user_tokens[static_cast<std::size_t>(ex.user)] << '\t';
    for (std::size_t i = 0; i < r.items.size(); ++i)
      os << (i ? "," : "") << ds.item_tokens[static_cast<std::size_t>(r.items[i].item)] << ':' << r.items[i].score;
    os << '\n';
  }
  return 0;
}

int cmd_synth(const dmi::SynthConfig& sc, const std::string& out_dir) {
  const dmi::SynthResult res = dmi::synth_generate(sc);
  fs::create_directories(out_dir);
  dmi::write_interactions(fs::path(out_dir) / "interactions.tsv", res.records);
  std::ostringstream cats;
  for (std::size_t i = 1; i < res.dataset.item_tokens.size(); ++i)
    cats << res.dataset.item_tokens[i] << "\tc" << res.truth.item_cluster[i] << '\n';
  write_text(fs::path(out_dir) / "categories.tsv", cats.str());
  std::ostringstream users;
  for (std::size_t u = 0; u < res.dataset.user_tokens.size(); ++u) {
    users << res.dataset.user_tokens[u] << '\t';
    const auto& cl = res.truth.user_clusters[u];
    for (std::size_t k = 0; k < cl.size(); ++k) users << (k ? "," : "") << 'c' << cl[k];
    users << '\n';
  }
  write_text(fs::path(out_dir) / "user_clusters.tsv", users.str());
  std::cout << "users=" << res.dataset.num_users() << "\nitems=" << res.dataset.num_items()
            << "\ninteractions=" << res.records.size() << '\n';
  return 0;
}

int cmd_inspect(const std::string& ckpt_path, bool schedule_only, const std::string& history_arg) {
  const dmi::CheckpointHeader h = dmi::read_checkpoint_header(ckpt_path);
  const dmi::Checkpoint ckpt = dmi::load_checkpoint(ckpt_path);
  std::cout << std::setprecision(17);
  if (!schedule_only) {
    std::cout << "version=" << h.version << "\niteration=" << ckpt.state.iteration
              << "\nbest_valid_recall@50=" << ckpt.state.best_recall << "\n# manifest: name rows cols offset\n";
    for (const auto& e : h.manifest)
      std::cout << e.name << '\t' << e.shape.rows << '\t' << e.shape.cols << '\t' << e.offset << '\n';
  }
  const dmi::NoiseSchedule& s = ckpt.model.schedule;
  std::cout << "# schedule: t bar_alpha alpha beta\n";
  for (std::size_t t = 0; t <= s.steps; ++t)
    std::cout << t << '\t' << s.bar_alpha[t] << '\t' << s.alpha[t] << '\t' << s.beta[t] << '\n';
  if (!history_arg.empty()) {
    std::vector<dmi::ItemId> history;
    std::stringstream ss(history_arg);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      const long v = std::stol(tok);
      if (v <= 0 || static_cast<std::size_t>(v) > ckpt.model.num_items())
        throw dmi::DataError("inspect: item id " + tok + " outside [1, " + std::to_string(ckpt.model.num_items()) + "]");
      history.push_back(static_cast<dmi::ItemId>(v));
    }
    const dmi::InterestOutput out = dmi::extract(ckpt.model.extractor, history);
    std::cout << "# attention: interest then one weight per history position\n";
    for (std::size_t k = 0; k < out.attention.rows(); ++k) {
      std::cout << k;
      for (std::size_t j = 0; j < out.attention.cols(); ++j) std::cout << '\t' << out.attention.at(k, j);
      std::cout << '\n';
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dmi: multi-interest retrieval with diffusion refinement"};
  app.require_subcommand(1);

  CommonArgs common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config_path, "Flat key = value config file");
    sub->add_option("--set", common.overrides, "Override one key (key=value); repeatable");
  };

  std::string out_dir = "ingested";
  auto* ingest = app.add_subcommand("ingest", "Filter and index an interaction log");
  add_common(ingest);
  ingest->add_option("-o,--out", out_dir, "Output directory");

  bool resume = false;
  auto* train = app.add_subcommand("train", "Train a model and keep the best checkpoint");
  add_common(train);
  train->add_flag("--resume", resume, "Continue from output.dir/last.ckpt when present");

  std::string ckpt_path, split_name;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  add_common(eval);
  eval->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  eval->add_option("--split", split_name, "train|valid|test (default eval.split)");

  std::string users_arg, retrieve_out;
  std::size_t top_n = 50;
  auto* retrieve = app.add_subcommand("retrieve", "Emit top-N items per user");
  add_common(retrieve);
  retrieve->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  retrieve->add_option("--users", users_arg, "Comma-separated user tokens (default: the eval split)");
  retrieve->add_option("--split", split_name, "Split used when --users is absent");
  retrieve->add_option("-n,--top", top_n, "List length")->check(CLI::PositiveNumber);
  retrieve->add_option("-o,--out", retrieve_out, "Output file (default stdout)");

  dmi::SynthConfig sc;
  std::string synth_out = "synth";
  auto* synth = app.add_subcommand("synth", "Generate a clustered synthetic interaction log");
  synth->add_option("--users", sc.n_users, "Number of users");
  synth->add_option("--items", sc.n_items, "Number of items");
  synth->add_option("--clusters", sc.n_clusters, "Number of clusters");
  synth->add_option("--seed", sc.seed, "Generator seed");
  synth->add_option("-o,--out", synth_out, "Output directory");

  bool schedule_only = false;
  std::string history_arg;
  auto* inspect = app.add_subcommand("inspect", "Print checkpoint manifest, schedule and attention weights");
  inspect->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  inspect->add_flag("--schedule-only", schedule_only, "Only print the noise schedule table");
  inspect->add_option("--history", history_arg, "Comma-separated dense item ids for an attention dump");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 64;
  }

  try {
    if (*ingest) return cmd_ingest(common, out_dir);
    if (*train) return cmd_train(common, resume);
    if (*eval) return cmd_eval(common, ckpt_path, split_name);
    if (*retrieve) return cmd_retrieve(common, ckpt_path, users_arg, split_name, top_n, retrieve_out);
    if (*synth) return cmd_synth(sc, synth_out);
    if (*inspect) return cmd_inspect(ckpt_path, schedule_only, history_arg);
  } catch (const dmi::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const dmi::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const dmi::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitOther;
  }
  return kExitOther;
}
