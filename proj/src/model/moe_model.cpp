#include "moelo/model/moe_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "moelo/error.hpp"
#include "moelo/numkit/checkpoint.hpp"
#include "moelo/numkit/kernels.hpp"
#include "moelo/numkit/ops.hpp"
#include "moelo/seed.hpp"

namespace moelo::model {

namespace kernels = numkit::kernels;
using numkit::Activation;
using numkit::Mlp;
using numkit::MlpTape;

MoEModel MoEModel::create(const ModelConfig& config) {
  if (config.input_dim == 0) throw ConfigError("model input_dim must be positive");
  MoEModel m;
  m.config = config;
  m.encoder = Mlp::build({config.input_dim, config.encoder_hidden, config.latent_dim}, Activation::relu, 0.0,
                         derive_seed(config.seed, "encoder"));
  m.projection = Mlp::build({config.latent_dim, config.latent_dim}, Activation::identity, 0.0,
                            derive_seed(config.seed, "projection"));
  m.frame = etf::generate_etf(config.r_max, config.latent_dim, derive_seed(config.seed, "anchors"));
  return m;
}

std::vector<std::size_t> MoEModel::active_anchors() const {
  std::vector<std::size_t> a;
  a.reserve(experts.size());
  for (const auto& e : experts) a.push_back(e.anchor_index);
  return a;
}

double MoEModel::dr_target_value() const {
  return config.dr_target == DrTarget::unity ? 1.0 : 1.0 / std::sqrt(static_cast<double>(frame.r_max()) - 1.0);
}

namespace {

Matrix normalize_rows(const Matrix& p, std::vector<double>* norms) {
  Matrix out = p;
  if (norms) norms->resize(p.rows());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    auto r = out.row(i);
    const double n = numkit::l2_norm(r);
    if (!(n > 0.0)) throw DegenerateInputError("projection produced a zero row; cannot normalize");
    for (double& v : r) v /= n;
    if (norms) (*norms)[i] = n;
  }
  return out;
}

void softmax_rows(Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) numkit::softmax_inplace(m.row(i));
}

void require_experts(const MoEModel& model) {
  if (model.experts.empty()) throw StateError("the model has no experts yet");
}

}  // namespace

Encoded encode_project(const MoEModel& model, const Matrix& x, bool training) {
  if (x.cols() != model.config.input_dim)
    throw ShapeError("fingerprint width " + std::to_string(x.cols()) + " != model input dim " +
                     std::to_string(model.config.input_dim));
  Encoded e;
  e.z = numkit::mlp_forward(model.encoder, x, training, 0);
  e.z_hat = normalize_rows(numkit::mlp_forward(model.projection, e.z, training, 0), nullptr);
  return e;
}

Matrix expert_forward(const Expert& expert, const Matrix& z, bool training, std::uint64_t seed) {
  Matrix logits = numkit::mlp_forward(expert.net, z, training, seed);
  softmax_rows(logits);
  return logits;
}

std::vector<double> fuse(std::span<const double> gate_probs, std::span<const std::span<const double>> local_probs) {
  if (gate_probs.size() != local_probs.size()) throw ShapeError("one gate weight per expert slice is required");
  std::vector<double> out;
  for (std::size_t r = 0; r < gate_probs.size(); ++r)
    for (double p : local_probs[r]) out.push_back(gate_probs[r] * p);
  return out;
}

FusedOutput fused_forward(const MoEModel& model, const Matrix& x, bool training) {
  return fused_forward(model, x, training ? etf::GateMode::soft : etf::GateMode::hard, training, 0);
}

FusedOutput fused_forward(const MoEModel& model, const Matrix& x, etf::GateMode mode, bool dropout,
                          std::uint64_t seed) {
  require_experts(model);
  const Encoded enc = encode_project(model, x);
  const auto active = model.active_anchors();
  const std::size_t batch = x.rows();

  FusedOutput out;
  out.probabilities = Matrix(batch, model.registry.num_classes());
  out.gates.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) out.gates.push_back(etf::gate(enc.z_hat.row(i), model.frame, active, mode));

  for (std::size_t e = 0; e < model.experts.size(); ++e) {
    const Expert& ex = model.experts[e];
    const std::size_t width = ex.net.out_dim();
    const std::size_t offset = model.registry.regions()[e].first_global;
    const std::uint64_t s = derive_seed(seed, "expert", {e});
    if (mode == etf::GateMode::soft) {
      Matrix local = expert_forward(ex, enc.z, dropout, s);
      for (std::size_t i = 0; i < batch; ++i) {
        const double g = out.gates[i].probabilities[e];
        for (std::size_t c = 0; c < width; ++c) out.probabilities(i, offset + c) = g * local(i, c);
      }
      out.per_expert.push_back(std::move(local));
    } else {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < batch; ++i)
        if (out.gates[i].selected == e) rows.push_back(i);
      Matrix local(batch, width);
      if (!rows.empty()) {
        const Matrix sub = expert_forward(ex, enc.z.select_rows(rows), dropout, s);
        for (std::size_t k = 0; k < rows.size(); ++k)
          for (std::size_t c = 0; c < width; ++c) {
            local(rows[k], c) = sub(k, c);
            out.probabilities(rows[k], offset + c) = sub(k, c);
          }
      }
      out.per_expert.push_back(std::move(local));
    }
  }
  return out;
}

double loss_dr(const Matrix& z_hat, std::span<const std::size_t> anchor_labels, const etf::AnchorFrame& frame,
               DrTarget target) {
  if (z_hat.rows() != anchor_labels.size()) throw ShapeError("one region label per row is required");
  if (z_hat.rows() == 0) throw DataError("empty batch");
  if (frame.r_max() < 2) throw GeometryError("dot-regression needs r_max >= 2");
  const double t = target == DrTarget::unity ? 1.0 : 1.0 / std::sqrt(static_cast<double>(frame.r_max()) - 1.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < z_hat.rows(); ++i) {
    if (anchor_labels[i] >= frame.r_max())
      throw RegistryError("region label " + std::to_string(anchor_labels[i]) + " beyond r_max");
    auto v = frame.anchor(anchor_labels[i]);
    auto z = z_hat.row(i);
    const double cos = kernels::dot(z.data(), v.data(), v.size()) / (numkit::l2_norm(z) * numkit::l2_norm(v));
    sum += (cos - t) * (cos - t);
  }
  return sum / (2.0 * static_cast<double>(z_hat.rows()));
}

double loss_ce(const FusedOutput& fused, std::span<const std::size_t> global_labels) {
  const Matrix& p = fused.probabilities;
  if (p.rows() != global_labels.size()) throw ShapeError("one label per row is required");
  if (p.rows() == 0) throw DataError("empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    if (global_labels[i] >= p.cols())
      throw RegistryError("global label " + std::to_string(global_labels[i]) + " out of range");
    sum -= std::log(std::max(p(i, global_labels[i]), kProbabilityFloor));
  }
  return sum / static_cast<double>(p.rows());
}

double loss_total(double ce, double dr, double ce_weight, double dr_weight) {
  if (!std::isfinite(ce) || !std::isfinite(dr)) throw NumericError("loss terms must be finite");
  return ce_weight * ce + dr_weight * dr;
}

LossBreakdown forward_backward(const MoEModel& model, const Matrix& x, std::span<const std::size_t> global_labels,
                               const GradRequest& request, std::span<const bool> dropout_for, std::uint64_t seed,
                               ModelGrads* grads) {
  require_experts(model);
  const std::size_t batch = x.rows();
  if (batch == 0) throw DataError("empty batch");
  if (global_labels.size() != batch) throw ShapeError("one label per row is required");
  if (x.cols() != model.config.input_dim) throw ShapeError("fingerprint width does not match the model");

  const std::size_t n_exp = model.experts.size();
  auto wants_expert = [&](std::size_t e) { return e < request.experts.size() && request.experts[e]; };
  auto drops = [&](std::size_t e) { return e < dropout_for.size() && dropout_for[e]; };

  const bool backward = grads != nullptr;
  const bool need_dz = backward && request.encoder;
  const bool need_proj_back = backward && (request.projection || request.encoder);

  std::vector<std::size_t> region(batch), local(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const auto info = model.registry.class_info(global_labels[i]);
    region[i] = info.region_pos;
    local[i] = info.local;
  }

  MlpTape enc_tape, proj_tape;
  const Matrix z = numkit::mlp_forward(model.encoder, x, false, 0, enc_tape);
  const Matrix p = numkit::mlp_forward(model.projection, z, false, 0, proj_tape);
  std::vector<double> norms;
  const Matrix z_hat = normalize_rows(p, &norms);

  const double inv_n = 1.0 / static_cast<double>(batch);
  const double w_ce = model.config.ce_weight;
  const double w_dr = model.config.dr_weight;
  const std::size_t dim = z_hat.cols();
  Matrix dz_hat(batch, dim);
  Matrix dz = need_dz ? Matrix(batch, z.cols()) : Matrix();

  if (backward) {
    grads->experts.assign(n_exp, std::nullopt);
  }

  LossBreakdown out;
  if (request.use_ce) {
    const auto active = model.active_anchors();
    Matrix gates(batch, n_exp);
    for (std::size_t i = 0; i < batch; ++i) {
      auto s = etf::cosine_scores(z_hat.row(i), model.frame, active);
      numkit::softmax_inplace(s);
      std::copy(s.begin(), s.end(), gates.row(i).begin());
    }
    Matrix d_scores(batch, n_exp);
    double ce = 0.0, ce_expert = 0.0;
    // Only the labelled region's expert reaches the true-class probability,
    // so each expert runs on the rows whose label falls in its region.
    for (std::size_t e = 0; e < n_exp; ++e) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < batch; ++i)
        if (region[i] == e) rows.push_back(i);
      if (rows.empty()) continue;
      const Expert& ex = model.experts[e];
      MlpTape tape;
      Matrix o = numkit::mlp_forward(ex.net, z.select_rows(rows), drops(e), derive_seed(seed, "expert", {e}), tape);
      softmax_rows(o);
      Matrix d_logits(rows.size(), o.cols());
      for (std::size_t k = 0; k < rows.size(); ++k) {
        const std::size_t i = rows[k];
        ce_expert -= std::log(std::max(o(k, local[i]), kProbabilityFloor));
        const double prob = gates(i, e) * o(k, local[i]);
        if (prob < kProbabilityFloor) {
          ce -= std::log(kProbabilityFloor);
          continue;
        }
        ce -= std::log(prob);
        for (std::size_t c = 0; c < o.cols(); ++c) d_logits(k, c) = w_ce * inv_n * o(k, c);
        d_logits(k, local[i]) -= w_ce * inv_n;
        for (std::size_t r = 0; r < n_exp; ++r) d_scores(i, r) = w_ce * inv_n * gates(i, r);
        d_scores(i, e) -= w_ce * inv_n;
      }
      if (backward && (wants_expert(e) || need_dz)) {
        auto back = numkit::mlp_backward(ex.net, tape, d_logits, wants_expert(e), need_dz);
        if (need_dz)
          for (std::size_t k = 0; k < rows.size(); ++k)
            kernels::axpy(1.0, back.input_grad.row(k).data(), dz.row(rows[k]).data(), dz.cols());
        if (wants_expert(e)) grads->experts[e] = std::move(back.grads);
      }
    }
    out.ce = ce * inv_n;
    out.ce_expert = ce_expert * inv_n;
    if (need_proj_back) {
      for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t r = 0; r < n_exp; ++r) {
          if (d_scores(i, r) == 0.0) continue;
          kernels::axpy(d_scores(i, r), model.frame.anchor(active[r]).data(), dz_hat.row(i).data(), dim);
        }
    }
  }

  if (request.use_dr) {
    const double t = model.dr_target_value();
    double dr = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
      auto v = model.frame.anchor(model.experts[region[i]].anchor_index);
      const double cos = kernels::dot(z_hat.row(i).data(), v.data(), dim);
      dr += (cos - t) * (cos - t);
      if (need_proj_back) kernels::axpy(w_dr * inv_n * (cos - t), v.data(), dz_hat.row(i).data(), dim);
    }
    out.dr = 0.5 * dr * inv_n;
  }
  out.total = (request.use_ce ? w_ce * out.ce : 0.0) + (request.use_dr ? w_dr * out.dr : 0.0);
  if (!std::isfinite(out.total)) throw NumericError("training loss is not finite");

  if (need_proj_back) {
    // d z_hat / d p = (I - z_hat z_hat^T) / ||p||
    Matrix dp(batch, dim);
    for (std::size_t i = 0; i < batch; ++i) {
      auto zh = z_hat.row(i);
      auto g = dz_hat.row(i);
      const double radial = kernels::dot(zh.data(), g.data(), dim);
      auto d = dp.row(i);
      for (std::size_t j = 0; j < dim; ++j) d[j] = (g[j] - radial * zh[j]) / norms[i];
    }
    auto back = numkit::mlp_backward(model.projection, proj_tape, dp, request.projection, need_dz);
    if (request.projection) grads->projection = std::move(back.grads);
    if (need_dz) kernels::axpy(1.0, back.input_grad.data(), dz.data(), dz.size());
  }
  if (need_dz) grads->encoder = numkit::mlp_backward(model.encoder, enc_tape, dz, true, false).grads;
  return out;
}

std::vector<Prediction> predict_batch(const MoEModel& model, const Matrix& x) {
  require_experts(model);
  const Encoded enc = encode_project(model, x);
  const auto active = model.active_anchors();
  std::vector<std::size_t> route(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) route[i] = etf::gate(enc.z_hat.row(i), model.frame, active, etf::GateMode::hard).selected;

  std::vector<Prediction> out(x.rows());
  for (std::size_t e = 0; e < model.experts.size(); ++e) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < route.size(); ++i)
      if (route[i] == e) rows.push_back(i);
    if (rows.empty()) continue;
    const Matrix logits = numkit::mlp_forward(model.experts[e].net, enc.z.select_rows(rows), false, 0);
    const auto& reg = model.registry.regions()[e];
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const std::size_t c = numkit::argmax(logits.row(k));
      Prediction& pr = out[rows[k]];
      pr.expert = e;
      pr.global_class = reg.first_global + c;
      pr.rp_id = reg.rps[c];
      pr.coords = model.registry.rp_coords(pr.rp_id);
    }
  }
  return out;
}

Prediction predict_location(const MoEModel& model, std::span<const double> x) {
  Matrix one(1, x.size(), std::vector<double>(x.begin(), x.end()));
  return predict_batch(model, one).front();
}

std::size_t add_expert(MoEModel& model, int region_id, std::span<const ReferencePoint> rps) {
  if (model.experts.size() >= model.frame.r_max())
    throw CapacityError("all " + std::to_string(model.frame.r_max()) + " anchors are already bound to experts");
  if (model.registry.region_pos(region_id))
    throw RegistryError("region " + std::to_string(region_id) + " already has an expert");
  std::size_t anchor = 0;
  const auto used = model.active_anchors();
  while (std::find(used.begin(), used.end(), anchor) != used.end()) ++anchor;

  const ModelConfig& c = model.config;
  Expert ex{region_id, anchor,
            Mlp::build({c.latent_dim, c.expert_hidden, rps.size()}, Activation::identity, c.expert_dropout,
                       derive_seed(c.seed, "expert", {anchor})),
            false};
  model.registry.add_region(region_id, rps);
  model.experts.push_back(std::move(ex));
  return model.experts.size() - 1;
}

std::size_t param_count(const MoEModel& model) {
  std::size_t n = model.encoder.param_count() + model.projection.param_count();
  for (const auto& e : model.experts) n += e.net.param_count();
  return n;
}

nlohmann::json to_json(const MoEModel& model) {
  const ModelConfig& c = model.config;
  nlohmann::json experts = nlohmann::json::array();
  for (const auto& e : model.experts)
    experts.push_back({{"region_id", e.region_id},
                       {"anchor_index", e.anchor_index},
                       {"frozen", e.frozen},
                       {"net", numkit::to_json(e.net)}});
  return {{"format", "moelo-model/1"},
          {"config",
           {{"input_dim", c.input_dim},
            {"encoder_hidden", c.encoder_hidden},
            {"latent_dim", c.latent_dim},
            {"expert_hidden", c.expert_hidden},
            {"expert_dropout", numkit::encode_double(c.expert_dropout)},
            {"r_max", c.r_max},
            {"dr_target", c.dr_target == DrTarget::unity ? "unity" : "paper"},
            {"ce_weight", numkit::encode_double(c.ce_weight)},
            {"dr_weight", numkit::encode_double(c.dr_weight)},
            {"seed", c.seed}}},
          {"encoder", numkit::to_json(model.encoder)},
          {"projection", numkit::to_json(model.projection)},
          {"frame", model.frame.to_json()},
          {"experts", std::move(experts)},
          {"registry", model.registry.to_json()}};
}

MoEModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "moelo-model/1") throw DataError("unsupported model checkpoint format");
    const auto& cj = j.at("config");
    MoEModel m;
    ModelConfig& c = m.config;
    c.input_dim = cj.at("input_dim").get<std::size_t>();
    c.encoder_hidden = cj.at("encoder_hidden").get<std::size_t>();
    c.latent_dim = cj.at("latent_dim").get<std::size_t>();
    c.expert_hidden = cj.at("expert_hidden").get<std::size_t>();
    c.expert_dropout = numkit::decode_double(cj.at("expert_dropout").get<std::string>());
    c.r_max = cj.at("r_max").get<std::size_t>();
    c.dr_target = cj.at("dr_target").get<std::string>() == "unity" ? DrTarget::unity : DrTarget::paper;
    c.ce_weight = numkit::decode_double(cj.at("ce_weight").get<std::string>());
    c.dr_weight = numkit::decode_double(cj.at("dr_weight").get<std::string>());
    c.seed = cj.at("seed").get<std::uint64_t>();
    m.encoder = numkit::mlp_from_json(j.at("encoder"));
    m.projection = numkit::mlp_from_json(j.at("projection"));
    m.frame = etf::AnchorFrame::from_json(j.at("frame"));
    m.registry = ClassRegistry::from_json(j.at("registry"));
    for (const auto& ej : j.at("experts"))
      m.experts.push_back({ej.at("region_id").get<int>(), ej.at("anchor_index").get<std::size_t>(),
                           numkit::mlp_from_json(ej.at("net")), ej.at("frozen").get<bool>()});
    if (m.experts.size() != m.registry.num_regions()) throw DataError("expert count does not match registry");
    if (m.encoder.in_dim() != c.input_dim) throw ShapeError("encoder width does not match input_dim");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model checkpoint: ") + e.what());
  }
}

}  // namespace moelo::model
