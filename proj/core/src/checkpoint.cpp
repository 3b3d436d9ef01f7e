// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#include "dmi/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace dmi {
namespace {

using nlohmann::json;

constexpr const char* kFormat = "dmi-checkpoint";

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

std::uint64_t parse_hex(const json& j) { return std::stoull(j.get<std::string>(), nullptr, 16); }

json model_json(const ModelConfig& c) {
  return {{"dim", c.extractor.dim},
          {"attn_dim", c.extractor.attn_dim},
          {"interests", c.extractor.interests},
          {"steps", c.steps},
          {"noise_scale", c.noise_scale},
          {"alpha_min", c.alpha_min},
          {"alpha_max", c.alpha_max},
          {"heads", c.heads},
          {"ff_dim", c.ff_dim},
          {"use_transformer", c.use_transformer},
          {"eta", c.refine.eta},
          {"gamma", c.refine.gamma},
          {"use_diffusion", c.refine.use_diffusion},
          {"use_pruning", c.refine.use_pruning},
          {"detach_v0", c.refine.detach_v0},
          {"detach_context", c.refine.detach_context}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig c;
  c.extractor.dim = j.at("dim");
  c.extractor.attn_dim = j.at("attn_dim");
  c.extractor.interests = j.at("interests");
  c.steps = j.at("steps");
  c.noise_scale = j.at("noise_scale");
  c.alpha_min = j.at("alpha_min");
  c.alpha_max = j.at("alpha_max");
  c.heads = j.at("heads");
  c.ff_dim = j.at("ff_dim");
  c.use_transformer = j.at("use_transformer");
  c.refine.eta = j.at("eta");
  c.refine.gamma = j.at("gamma");
  c.refine.use_diffusion = j.at("use_diffusion");
  c.refine.use_pruning = j.at("use_pruning");
  c.refine.detach_v0 = j.at("detach_v0");
  c.refine.detach_context = j.at("detach_context");
  return c;
}

json train_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"n_neg", c.n_neg},
          {"lr", c.lr},
          {"lambda", c.lambda},
          {"max_iterations", c.max_iterations},
          {"eval_every", c.eval_every},
          {"patience", c.patience},
          {"seed", c.seed},
          {"target_policy", c.target_policy == TargetPolicy::kLast ? "last" : "uniform"},
          {"eval_threads", c.eval_threads},
          {"eval_deterministic_eps0", c.eval_deterministic_eps0}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  c.batch_size = j.at("batch_size");
  c.n_neg = j.at("n_neg");
  c.lr = j.at("lr");
  c.lambda = j.at("lambda");
  c.max_iterations = j.at("max_iterations");
  c.eval_every = j.at("eval_every");
  c.patience = j.at("patience");
  c.seed = j.at("seed");
  c.target_policy = j.at("target_policy").get<std::string>() == "last" ? TargetPolicy::kLast : TargetPolicy::kUniform;
  c.eval_threads = j.at("eval_threads");
  c.eval_deterministic_eps0 = j.at("eval_deterministic_eps0");
  return c;
}

json state_json(const FitState& s) {
  return {{"iteration", s.iteration},         {"evaluations", s.evaluations}, {"evals_since_best", s.evals_since_best},
          {"best_iteration", s.best_iteration}, {"best_recall", s.best_recall}, {"finished", s.finished},
          {"sum_total", s.sum_total},           {"sum_rec", s.sum_rec},         {"sum_recon", s.sum_recon},
          {"sum_count", s.sum_count}};
}

FitState state_from_json(const json& j) {
  FitState s;
  s.iteration = j.at("iteration");
  s.evaluations = j.at("evaluations");
  s.evals_since_best = j.at("evals_since_best");
  s.best_iteration = j.at("best_iteration");
  s.best_recall = j.at("best_recall");
  s.finished = j.at("finished");
  s.sum_total = j.at("sum_total");
  s.sum_rec = j.at("sum_rec");
  s.sum_recon = j.at("sum_recon");
  s.sum_count = j.at("sum_count");
  return s;
}

struct NamedArray {
  std::string name;
  Shape shape;
  std::span<const real> values;
};

void put_f32(std::string& out, real v) {
  const auto f = static_cast<float>(v);
  std::uint32_t bits = 0;
  std::memcpy(&bits, &f, sizeof bits);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffU));
}

real get_f32(const char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  float f = 0;
  std::memcpy(&f, &bits, sizeof f);
  return static_cast<real>(f);
}

std::vector<NamedArray> named_arrays(const Checkpoint& ckpt) {
  std::vector<NamedArray> out;
  const auto arrays = ckpt.model.arrays();
  const auto names = ckpt.model.array_names();
  for (std::size_t i = 0; i < arrays.size(); ++i) out.push_back({names[i], arrays[i].shape(), arrays[i].values()});
  const auto trainable = ckpt.model.trainable();
  if (!ckpt.adam.first_moment.empty()) {
    // trainable() is a prefix of arrays() in the same order.
    for (std::size_t i = 0; i < trainable.size(); ++i)
      out.push_back({"adam.m." + names[i], trainable[i].shape(), ckpt.adam.first_moment[i]});
    for (std::size_t i = 0; i < trainable.size(); ++i)
      out.push_back({"adam.v." + names[i], trainable[i].shape(), ckpt.adam.second_moment[i]});
  }
  return out;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::string payload;
  json manifest = json::array();
  for (const NamedArray& a : named_arrays(ckpt)) {
    manifest.push_back({{"name", a.name}, {"rows", a.shape.rows}, {"cols", a.shape.cols}, {"offset", payload.size()}});
    for (real v : a.values) put_f32(payload, v);
  }
  const json header = {
      {"format", kFormat},
      {"version", ckpt.version},
      {"num_items", ckpt.model.num_items()},
      {"model", model_json(ckpt.model.config)},
      {"train", train_json(ckpt.train)},
      {"item_digest", hex(ckpt.item_digest)},
      {"user_digest", hex(ckpt.user_digest)},
      {"rng", {{"key", hex(ckpt.rng.key())}, {"counter", hex(ckpt.rng.counter())}}},
      {"adam",
       {{"step", ckpt.adam.step},
        {"lr", ckpt.adam.lr},
        {"beta1", ckpt.adam.beta1},
        {"beta2", ckpt.adam.beta2},
        {"epsilon", ckpt.adam.epsilon},
        {"has_moments", !ckpt.adam.first_moment.empty()}}},
      {"state", state_json(ckpt.state)},
      {"manifest", manifest},
      {"payload_bytes", payload.size()},
      {"payload_digest", hex(fnv1a(payload.data(), payload.size()))},
  };

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out << header.dump() << '\n';
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw DataError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  CheckpointHeader h;
  if (!std::getline(in, h.json)) throw DataError(path.string() + ": empty checkpoint");
  json j;
  try {
    j = json::parse(h.json);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed checkpoint header (" + e.what() + ")");
  }
  if (!j.is_object() || j.value("format", "") != kFormat) throw DataError(path.string() + ": not a dmi checkpoint");
  h.version = j.at("version");
  if (h.version != Checkpoint::kVersion)
    throw DataError(path.string() + ": checkpoint version " + std::to_string(h.version) + ", this build reads version " +
                    std::to_string(Checkpoint::kVersion));
  try {
    for (const json& e : j.at("manifest"))
      h.manifest.push_back({e.at("name"), Shape{e.at("rows"), e.at("cols")}, e.at("offset")});
    h.payload_digest = parse_hex(j.at("payload_digest"));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed checkpoint header (" + e.what() + ")");
  }
  return h;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const CheckpointHeader h = read_checkpoint_header(path);
  const json j = json::parse(h.json);

  std::ifstream in(path, std::ios::binary);
  std::string line;
  std::getline(in, line);
  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t expected = j.at("payload_bytes");
  if (payload.size() < expected)
    throw DataError(path.string() + ": truncated checkpoint (" + std::to_string(payload.size()) + " of " +
                    std::to_string(expected) + " payload bytes)");
  if (payload.size() > expected) throw DataError(path.string() + ": trailing bytes after checkpoint payload");
  if (fnv1a(payload.data(), payload.size()) != h.payload_digest)
    throw DataError(path.string() + ": payload digest mismatch (corrupted checkpoint)");

  Checkpoint ckpt;
  try {
    const ModelConfig mc = model_from_json(j.at("model"));
    CounterRng scratch(0);
    ckpt.model = Model::init(j.at("num_items").get<std::size_t>(), mc, scratch);
    ckpt.train = train_from_json(j.at("train"));
    ckpt.item_digest = parse_hex(j.at("item_digest"));
    ckpt.user_digest = parse_hex(j.at("user_digest"));
    ckpt.rng = CounterRng(parse_hex(j.at("rng").at("key")), parse_hex(j.at("rng").at("counter")));
    const json& adam = j.at("adam");
    ckpt.adam.step = adam.at("step");
    ckpt.adam.lr = adam.at("lr");
    ckpt.adam.beta1 = adam.at("beta1");
    ckpt.adam.beta2 = adam.at("beta2");
    ckpt.adam.epsilon = adam.at("epsilon");
    ckpt.state = state_from_json(j.at("state"));
    if (adam.at("has_moments").get<bool>()) {
      for (const Tensor& t : ckpt.model.trainable()) {
        ckpt.adam.first_moment.emplace_back(t.size(), real(0));
        ckpt.adam.second_moment.emplace_back(t.size(), real(0));
      }
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed checkpoint header (" + e.what() + ")");
  }

  std::map<std::string, const ManifestEntry*> by_name;
  for (const ManifestEntry& e : h.manifest) by_name[e.name] = &e;
  auto fill = [&](const std::string& name, Shape shape, std::span<real> dst) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError(path.string() + ": checkpoint lacks array '" + name + "'");
    const ManifestEntry& e = *it->second;
    if (e.shape != shape)
      throw DataError(path.string() + ": array '" + name + "' is " + to_string(e.shape) + ", expected " +
                      to_string(shape));
    if (e.offset + 4 * dst.size() > payload.size()) throw DataError(path.string() + ": array '" + name + "' overruns payload");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = get_f32(payload.data() + e.offset + 4 * i);
  };
  auto arrays = ckpt.model.arrays();
  const auto names = ckpt.model.array_names();
  for (std::size_t i = 0; i < arrays.size(); ++i) fill(names[i], arrays[i].shape(), arrays[i].values());
  const auto trainable = ckpt.model.trainable();
  for (std::size_t i = 0; i < ckpt.adam.first_moment.size(); ++i) {
    fill("adam.m." + names[i], trainable[i].shape(), ckpt.adam.first_moment[i]);
    fill("adam.v." + names[i], trainable[i].shape(), ckpt.adam.second_moment[i]);
  }
  return ckpt;
}

void check_compatible(const Checkpoint& ckpt, const Dataset& ds) {
  if (ckpt.item_digest != ds.item_digest() || ckpt.user_digest != ds.user_digest())
    throw DataError("checkpoint was built for a different dataset (item/user digest mismatch)");
  if (ckpt.model.num_items() != ds.num_items())
    throw DataError("checkpoint has " + std::to_string(ckpt.model.num_items()) + " items, dataset has " +
                    std::to_string(ds.num_items()));
}

}  // namespace dmi
