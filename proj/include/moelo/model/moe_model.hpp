#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "moelo/etf/etf_gate.hpp"
#include "moelo/model/registry.hpp"
#include "moelo/numkit/matrix.hpp"
#include "moelo/numkit/mlp.hpp"

namespace moelo::model {

using numkit::Matrix;

// Alignment target of the dot-regression loss: `paper` uses 1/sqrt(r_max-1)
// as printed with the loss, `unity` the conventional target of 1.
enum class DrTarget { paper, unity };

struct ModelConfig {
  std::size_t input_dim = 0;
  std::size_t encoder_hidden = 128;
  std::size_t latent_dim = 64;
  std::size_t expert_hidden = 128;
  double expert_dropout = 0.2;
  std::size_t r_max = 6;
  DrTarget dr_target = DrTarget::paper;
  double ce_weight = 1.0;
  double dr_weight = 1.0;
  std::uint64_t seed = 0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Expert {
  int region_id = 0;
  std::size_t anchor_index = 0;
  numkit::Mlp net;  // latent -> hidden (ReLU, dropout) -> |C_r| logits
  bool frozen = false;
  friend bool operator==(const Expert&, const Expert&) = default;
};

// Shared encoder, gating projection, fixed anchor frame and the growing set
// of per-region experts. Expert i always belongs to registry region i.
struct MoEModel {
  ModelConfig config;
  numkit::Mlp encoder;     // D -> 128 -> 64, ReLU
  numkit::Mlp projection;  // 64 -> 64, identity; rows are L2-normalized after
  etf::AnchorFrame frame;
  std::vector<Expert> experts;
  ClassRegistry registry;

  static MoEModel create(const ModelConfig& config);

  std::vector<std::size_t> active_anchors() const;
  double dr_target_value() const;

  friend bool operator==(const MoEModel&, const MoEModel&) = default;
};

struct Encoded {
  Matrix z;
  Matrix z_hat;
};

Encoded encode_project(const MoEModel& model, const Matrix& x, bool training = false);

// Local softmax of one expert. Dropout only when training.
Matrix expert_forward(const Expert& expert, const Matrix& z, bool training = false, std::uint64_t seed = 0);

struct FusedOutput {
  Matrix probabilities;                 // batch x |C|
  std::vector<etf::GateOutput> gates;   // per sample
  std::vector<Matrix> per_expert;       // per expert: batch x |C_r| local softmax (zero rows when not routed)
};

// Soft gating when training, hard gating otherwise. Under hard gating each
// sample runs through exactly one expert and every other slice is zero.
FusedOutput fused_forward(const MoEModel& model, const Matrix& x, bool training);
FusedOutput fused_forward(const MoEModel& model, const Matrix& x, etf::GateMode mode, bool dropout,
                          std::uint64_t seed = 0);

// concat_r g_r * o_r for one sample.
std::vector<double> fuse(std::span<const double> gate_probs, std::span<const std::span<const double>> local_probs);

double loss_dr(const Matrix& z_hat, std::span<const std::size_t> anchor_labels, const etf::AnchorFrame& frame,
               DrTarget target = DrTarget::paper);
double loss_ce(const FusedOutput& fused, std::span<const std::size_t> global_labels);
double loss_total(double ce, double dr, double ce_weight = 1.0, double dr_weight = 1.0);

constexpr double kProbabilityFloor = 1e-12;

// Which losses enter the objective and which parameter groups need gradients.
struct GradRequest {
  bool use_ce = true;
  bool use_dr = true;
  bool encoder = true;
  bool projection = true;
  std::vector<bool> experts;  // per expert; missing entries mean false
};

struct ModelGrads {
  numkit::MlpGrads encoder;
  numkit::MlpGrads projection;
  std::vector<std::optional<numkit::MlpGrads>> experts;
};

struct LossBreakdown {
  double ce = 0.0;
  // -log of the true class under its own expert alone, ignoring the gate.
  // This is the part a strict CIL step can still reduce.
  double ce_expert = 0.0;
  double dr = 0.0;
  double total = 0.0;
};

// Objective of one batch under soft gating, plus gradients of the weighted
// total for every requested group when `grads` is non-null. Experts with
// `dropout_for[e]` set run with dropout (seeded by `seed`).
LossBreakdown forward_backward(const MoEModel& model, const Matrix& x, std::span<const std::size_t> global_labels,
                               const GradRequest& request, std::span<const bool> dropout_for, std::uint64_t seed,
                               ModelGrads* grads);

struct Prediction {
  std::size_t global_class = 0;
  int rp_id = 0;
  Vec3 coords;
  std::size_t expert = 0;
};

Prediction predict_location(const MoEModel& model, std::span<const double> x);
std::vector<Prediction> predict_batch(const MoEModel& model, const Matrix& x);

// Binds a new expert to the lowest unused anchor and appends its classes.
std::size_t add_expert(MoEModel& model, int region_id, std::span<const ReferencePoint> rps);

std::size_t param_count(const MoEModel& model);

nlohmann::json to_json(const MoEModel& model);
MoEModel model_from_json(const nlohmann::json& j);

}  // namespace moelo::model
