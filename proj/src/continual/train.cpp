#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <string>

#include "moelo/continual/continual.hpp"
#include "moelo/error.hpp"
#include "moelo/log.hpp"

namespace moelo::continual {

const char* to_string(IncrementMode m) noexcept {
  switch (m) {
    case IncrementMode::DIL:
      return "DIL";
    case IncrementMode::CIL:
      return "CIL";
    case IncrementMode::CDIL:
      return "CDIL";
  }
  return "?";
}

IncrementMode parse_mode(std::string_view s) {
  if (s == "DIL" || s == "dil") return IncrementMode::DIL;
  if (s == "CIL" || s == "cil") return IncrementMode::CIL;
  if (s == "CDIL" || s == "cdil") return IncrementMode::CDIL;
  throw ConfigError("unknown increment mode '" + std::string(s) + "'");
}

TrainPlan plan_increment(IncrementMode mode, bool has_new_region, bool cil_train_gate) {
  TrainPlan p;
  p.mode = mode;
  switch (mode) {
    case IncrementMode::DIL:
      if (has_new_region) throw PlanError("a DIL increment cannot introduce a region");
      p.train_encoder = p.train_projection = true;
      p.use_ce = p.use_dr = true;
      break;
    case IncrementMode::CIL:
      if (!has_new_region) throw PlanError("a CIL increment must introduce a region");
      p.train_new_experts = true;
      p.train_projection = cil_train_gate;
      p.use_ce = true;
      break;
    case IncrementMode::CDIL:
      if (!has_new_region) throw PlanError("a CDIL increment must introduce a region");
      p.train_encoder = p.train_projection = p.train_new_experts = true;
      p.use_ce = p.use_dr = true;
      break;
  }
  return p;
}

TrainPlan plan_baseline(std::vector<RegionSpec> regions) {
  if (regions.empty()) throw PlanError("the baseline step needs at least one region");
  TrainPlan p;
  p.train_encoder = p.train_projection = p.train_new_experts = true;
  p.use_ce = p.use_dr = true;
  p.new_regions = std::move(regions);
  return p;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(replay_fraction >= 0.0 && replay_fraction < 1.0)) throw ConfigError("replay_fraction must lie in [0, 1)");
  if (!(adam.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam.epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
}

LabeledSet label_dataset(const model::MoEModel& model, const data::Dataset& ds) {
  if (ds.ap_count != model.config.input_dim)
    throw ShapeError("dataset has " + std::to_string(ds.ap_count) + " APs, model expects " +
                     std::to_string(model.config.input_dim));
  LabeledSet s;
  s.x = data::to_features(ds);
  s.labels.reserve(ds.samples.size());
  for (const auto& fp : ds.samples) s.labels.push_back(model.registry.global_class(fp.rp_id));
  return s;
}

Batch compose_batch(const model::MoEModel& model, const LabeledSet& new_data, std::span<const std::size_t> order,
                    std::size_t& cursor, const ReplayBuffer& buffer, const TrainConfig& cfg, Rng& rng) {
  if (order.empty()) throw DataError("no new samples to train on");
  const auto replay = buffer.entries();
  const std::size_t n_replay =
      replay.empty() ? 0 : static_cast<std::size_t>(std::floor(cfg.replay_fraction * static_cast<double>(cfg.batch_size)));
  const std::size_t n_new = std::min(cfg.batch_size - n_replay, order.size() - std::min(cursor, order.size()));

  std::vector<std::size_t> picks;
  if (n_replay > 0) {
    if (replay.size() >= n_replay) {
      std::vector<std::size_t> all(replay.size());
      std::iota(all.begin(), all.end(), 0);
      for (std::size_t k = 0; k < n_replay; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, all.size() - 1);
        std::swap(all[k], all[pick(rng)]);
      }
      picks.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_replay));
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, replay.size() - 1);
      for (std::size_t k = 0; k < n_replay; ++k) picks.push_back(pick(rng));
    }
  }

  const std::size_t dim = new_data.x.cols();
  Batch b;
  b.replay_count = n_replay;
  b.x = Matrix(n_replay + n_new, dim);
  for (std::size_t k = 0; k < n_replay; ++k) {
    const ReplayEntry& e = *replay[picks[k]];
    if (e.features.size() != dim) throw ShapeError("replay prototype width does not match the data");
    std::copy(e.features.begin(), e.features.end(), b.x.row(k).begin());
    b.labels.push_back(e.global_label);
  }
  for (std::size_t k = 0; k < n_new; ++k) {
    const std::size_t i = order[cursor++];
    std::copy(new_data.x.row(i).begin(), new_data.x.row(i).end(), b.x.row(n_replay + k).begin());
    b.labels.push_back(new_data.labels[i]);
  }
  for (std::size_t g : b.labels) {
    const auto info = model.registry.class_info(g);
    b.region_labels.push_back(model.experts.at(info.region_pos).anchor_index);
  }
  return b;
}

namespace {

struct Group {
  numkit::Mlp* net;
  numkit::AdamState state;
};

}  // namespace

TrainReport train_increment(model::MoEModel& model, const TrainPlan& plan, const data::Dataset& new_data,
                            const ReplayBuffer& buffer, const TrainConfig& cfg) {
  cfg.validate();
  if (new_data.samples.empty()) throw DataError("increment has no training data");
  const bool needs_region = !plan.mode || *plan.mode != IncrementMode::DIL;
  if (plan.mode && needs_region && plan.new_regions.size() != 1)
    throw PlanError(std::string(to_string(*plan.mode)) + " increments introduce exactly one region");
  if (!needs_region && !plan.new_regions.empty()) throw PlanError("a DIL increment cannot introduce a region");

  TrainReport report;
  const std::size_t prior = model.experts.size();
  for (auto& e : model.experts) e.frozen = true;
  for (const auto& r : plan.new_regions) report.new_experts.push_back(model::add_expert(model, r.region_id, r.rps));
  if (model.experts.empty()) throw StateError("no experts to train");

  const LabeledSet set = label_dataset(model, new_data);

  model::GradRequest req;
  req.use_ce = plan.use_ce;
  req.use_dr = plan.use_dr;
  req.encoder = plan.train_encoder;
  req.projection = plan.train_projection;
  req.experts.assign(model.experts.size(), false);
  std::vector<bool> dropout_mask(model.experts.size(), false);
  for (std::size_t e = prior; e < model.experts.size(); ++e) {
    req.experts[e] = plan.train_new_experts;
    model.experts[e].frozen = !plan.train_new_experts;
    dropout_mask[e] = plan.train_new_experts;
  }
  // std::vector<bool> has no contiguous storage for a span.
  std::unique_ptr<bool[]> dropout(new bool[dropout_mask.size()]);
  std::copy(dropout_mask.begin(), dropout_mask.end(), dropout.get());
  const std::span<const bool> dropout_for(dropout.get(), dropout_mask.size());

  std::vector<Group> groups;
  auto add_group = [&](numkit::Mlp& net) {
    auto params = net.params();
    groups.push_back({&net, numkit::AdamState::for_params(params, cfg.adam)});
  };
  if (plan.train_encoder) add_group(model.encoder);
  if (plan.train_projection) add_group(model.projection);
  if (plan.train_new_experts)
    for (std::size_t e = prior; e < model.experts.size(); ++e) add_group(model.experts[e].net);
  if (groups.empty()) throw PlanError("plan leaves nothing trainable");

  std::vector<std::size_t> order(set.labels.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = make_rng(cfg.seed, "epoch", {epoch});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    Rng replay_rng = make_rng(cfg.seed, "replay", {epoch});

    EpochLoss acc;
    std::size_t batches = 0;
    std::size_t cursor = 0;
    while (cursor < order.size()) {
      const Batch b = compose_batch(model, set, order, cursor, buffer, cfg, replay_rng);
      model::ModelGrads grads;
      const auto loss = model::forward_backward(model, b.x, b.labels, req, dropout_for,
                                                derive_seed(cfg.seed, "step", {report.optimizer_steps}), &grads);
      for (auto& g : groups) {
        const numkit::MlpGrads* mg = nullptr;
        if (g.net == &model.encoder) {
          mg = &grads.encoder;
        } else if (g.net == &model.projection) {
          mg = &grads.projection;
        } else {
          for (std::size_t e = prior; e < model.experts.size(); ++e)
            if (g.net == &model.experts[e].net) mg = grads.experts[e] ? &*grads.experts[e] : nullptr;
        }
        if (!mg) continue;  // expert had no rows of its region in this batch
        auto params = g.net->params();
        auto gt = mg->tensors();
        numkit::adam_step(params, gt, g.state);
      }
      ++report.optimizer_steps;
      acc.ce += loss.ce;
      acc.ce_expert += loss.ce_expert;
      acc.dr += loss.dr;
      acc.total += loss.total;
      ++batches;
    }
    const double inv = 1.0 / static_cast<double>(batches);
    report.epochs.push_back({acc.ce * inv, acc.ce_expert * inv, acc.dr * inv, acc.total * inv});
    log::debug("epoch " + std::to_string(epoch) + " ce=" + std::to_string(acc.ce * inv) +
               " dr=" + std::to_string(acc.dr * inv));
  }
  return report;
}

}  // namespace moelo::continual
