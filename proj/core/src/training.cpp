// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#include "dmi/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "dmi/checkpoint.hpp"
#include "dmi/ops.hpp"
#include "dmi/retrieval.hpp"

namespace dmi {
namespace {

void require(bool ok, const char* field, const char* what) {
  if (!ok) throw ConfigError(std::string("train.") + field + " " + what);
}

double valid_recall(const Model& model, const Dataset& ds, const TrainConfig& cfg) {
  EvalOptions opts;
  opts.cutoffs = {50};
  opts.inference.seed = cfg.seed;
  opts.inference.deterministic_eps0 = cfg.eval_deterministic_eps0;
  opts.threads = cfg.eval_threads;
  return evaluate_split(model, ds, Split::kValid, opts).front().recall;
}

}  // namespace

void TrainConfig::validate() const {
  require(batch_size > 0, "batch_size", "must be positive");
  require(n_neg > 0, "n_neg", "must be positive");
  require(std::isfinite(lr) && lr >= 0, "lr", "must be finite and non-negative");
  require(std::isfinite(lambda) && lambda >= 0, "lambda", "must be finite and non-negative");
  require(max_iterations > 0, "max_iterations", "must be positive");
  require(eval_every > 0, "eval_every", "must be positive");
  require(patience > 0, "patience", "must be positive");
}

Checkpoint snapshot(const Checkpoint& ckpt) {
  Checkpoint copy = ckpt;
  copy.model = ckpt.model.clone();
  return copy;
}

Tensor rec_loss(const Tensor& z, std::span<const ItemId> targets, std::span<const ItemId> negatives,
                const Tensor& embeddings) {
  const std::size_t b = z.rows();
  if (targets.size() != b)
    throw DimensionError("rec_loss: " + std::to_string(targets.size()) + " targets for " + std::to_string(b) + " rows");
  if (negatives.empty()) throw UsageError("rec_loss: no negatives");
  const auto items = static_cast<ItemId>(embeddings.rows());
  auto check = [&](ItemId id) {
    if (id <= 0 || id >= items) throw UsageError("rec_loss: invalid item id " + std::to_string(id));
  };
  for (ItemId t : targets) check(t);
  for (ItemId n : negatives) check(n);

  const Tensor pos = ops::row_sums(ops::mul(z, ops::gather_rows(embeddings, targets)));
  const Tensor neg = ops::matmul_nt(z, ops::gather_rows(embeddings, negatives));
  const Tensor parts[] = {pos, neg};
  const Tensor logits = ops::concat_cols(parts);
  const std::size_t c = negatives.size() + 1;
  std::vector<real> mask(b * c, real(0));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < negatives.size(); ++j)
      if (negatives[j] == targets[i]) mask[i * c + j + 1] = -std::numeric_limits<real>::infinity();
  return ops::softmax_nll(logits, Tensor::from({b, c}, std::move(mask)), 0);
}

Tensor recon_loss(const Tensor& estimate, const Tensor& target) {
  if (estimate.shape() != target.shape())
    throw DimensionError("recon_loss: " + to_string(estimate.shape()) + " vs " + to_string(target.shape()));
  return ops::l2_norm(ops::sub(estimate, ops::detach(target)));
}

LossGraph batch_losses(const Model& model, const Batch& batch, double lambda, CounterRng& rng) {
  std::vector<Tensor> fused;
  std::vector<Tensor> recon;
  fused.reserve(batch.batch_size);
  const auto table = model.extractor.embeddings.values();
  const std::size_t d = model.extractor.config.dim;
  for (std::size_t i = 0; i < batch.batch_size; ++i) {
    const InterestOutput out = extract(model.extractor, batch.history_row(i), batch.mask_row(i));
    const auto target = table.subspan(static_cast<std::size_t>(batch.targets[i]) * d, d);
    const InterestSelection sel = select_interest(out, target);
    const RefineOutput r = refine(sel.interest, sel.attention, out.history, batch.lengths[i], model.schedule,
                                  model.denoiser, model.config.refine, rng, RefineMode::kTrain);
    fused.push_back(r.fused);
    if (model.config.refine.use_diffusion) recon.push_back(recon_loss(r.estimate, r.target));
  }
  LossGraph g;
  g.rec = rec_loss(ops::concat_rows(fused), batch.targets, batch.negatives, model.extractor.embeddings);
  if (recon.empty()) {
    g.total = g.rec;
    return g;
  }
  g.recon = ops::mean(ops::concat_rows(recon));
  g.total = lambda == 0.0 ? g.rec : ops::add(g.rec, ops::scale(g.recon, static_cast<real>(lambda)));
  return g;
}

std::uint64_t batch_digest(const Batch& batch) {
  std::uint64_t h = fnv1a(batch.histories.data(), batch.histories.size() * sizeof(ItemId));
  h = fnv1a(batch.targets.data(), batch.targets.size() * sizeof(ItemId), h);
  return fnv1a(batch.negatives.data(), batch.negatives.size() * sizeof(ItemId), h);
}

StepLosses train_step(Model& model, AdamState& adam, const Batch& batch, double lambda, CounterRng& rng,
                      std::uint64_t iteration) {
  Tape tape;
  StepLosses losses;
  {
    Tape::Scope scope(tape);
    LossGraph g = batch_losses(model, batch, lambda, rng);
    losses.total = g.total.item();
    losses.rec = g.rec.item();
    losses.recon = g.recon.defined() ? g.recon.item() : 0.0;
    if (!std::isfinite(losses.total)) {
      std::ostringstream msg;
      msg << "non-finite loss at iteration " << iteration << " (L_S=" << losses.rec << ", L_dm=" << losses.recon
          << ", batch digest " << std::hex << batch_digest(batch) << ")";
      throw NumericError(msg.str());
    }
    tape.backward(g.total);
  }
  auto pad_grad = model.extractor.embeddings.grad().subspan(0, model.extractor.config.dim);
  std::fill(pad_grad.begin(), pad_grad.end(), real(0));
  std::vector<Tensor> params = model.trainable();
  adam_step(params, adam);
  return losses;
}

Checkpoint init_checkpoint(const Dataset& ds, const ModelConfig& model, const TrainConfig& train) {
  train.validate();
  Checkpoint ckpt;
  ckpt.train = train;
  ckpt.rng = CounterRng(train.seed);
  CounterRng init_rng = ckpt.rng.substream(~std::uint64_t{0});
  ckpt.model = Model::init(ds.num_items(), model, init_rng);
  ckpt.adam.lr = train.lr;
  ckpt.item_digest = ds.item_digest();
  ckpt.user_digest = ds.user_digest();
  return ckpt;
}

Checkpoint fit(const Dataset& ds, Checkpoint& ckpt, const FitOptions& options) {
  const TrainConfig& cfg = ckpt.train;
  cfg.validate();
  check_compatible(ckpt, ds);
  if (ds.users_in(Split::kTrain).empty()) throw DataError("fit: train split is empty");

  namespace fs = std::filesystem;
  std::optional<fs::path> last_path, best_path, log_path;
  if (options.out_dir) {
    fs::create_directories(*options.out_dir);
    last_path = *options.out_dir / "last.ckpt";
    best_path = *options.out_dir / "best.ckpt";
    log_path = *options.out_dir / "train_log.tsv";
  }

  FitState& st = ckpt.state;
  std::optional<Checkpoint> best = options.resume_best;
  if (!best && st.best_recall >= 0 && best_path && fs::exists(*best_path)) best = load_checkpoint(*best_path);

  std::ofstream log;
  if (log_path) {
    const bool fresh = st.iteration == 0;
    log.open(*log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log) throw DataError("cannot write " + log_path->string());
    if (fresh) log << "iteration\tL\tL_S\tL_dm\tvalid_recall@50\n";
    log << std::setprecision(9);
  }

  ckpt.adam.lr = cfg.lr;
  while (!st.finished && st.iteration < cfg.max_iterations) {
    if (options.stop_after > 0 && st.iteration >= options.stop_after) break;
    CounterRng step_rng = ckpt.rng.substream(st.iteration);
    const Batch batch = next_train_batch(ds, cfg.batch_size, cfg.n_neg, step_rng, cfg.target_policy);
    const StepLosses l = train_step(ckpt.model, ckpt.adam, batch, cfg.lambda, step_rng, st.iteration);
    ++st.iteration;
    st.sum_total += l.total;
    st.sum_rec += l.rec;
    st.sum_recon += l.recon;
    ++st.sum_count;

    if (st.iteration % cfg.eval_every != 0 && st.iteration != cfg.max_iterations) continue;
    FitLogEntry entry;
    entry.iteration = st.iteration;
    const auto n = static_cast<double>(st.sum_count);
    entry.losses = {st.sum_total / n, st.sum_rec / n, st.sum_recon / n};
    st.sum_total = st.sum_rec = st.sum_recon = 0;
    st.sum_count = 0;
    entry.valid_recall = valid_recall(ckpt.model, ds, cfg);
    ++st.evaluations;
    const bool improved = entry.valid_recall > st.best_recall;
    if (improved) {
      st.best_recall = entry.valid_recall;
      st.best_iteration = st.iteration;
      st.evals_since_best = 0;
    } else {
      ++st.evals_since_best;
    }
    if (st.evals_since_best >= cfg.patience) st.finished = true;
    if (improved) {
      best = snapshot(ckpt);
      if (best_path) save_checkpoint(*best, *best_path);
    }
    if (log.is_open()) {
      log << entry.iteration << '\t' << entry.losses.total << '\t' << entry.losses.rec << '\t' << entry.losses.recon
          << '\t' << entry.valid_recall << '\n';
      log.flush();
    }
    if (last_path) save_checkpoint(ckpt, *last_path);
    if (options.on_eval) options.on_eval(entry);
  }
  if (st.iteration >= cfg.max_iterations) st.finished = true;
  if (last_path) save_checkpoint(ckpt, *last_path);
  if (!best) best = snapshot(ckpt);
  return *best;
}

}  // namespace dmi
