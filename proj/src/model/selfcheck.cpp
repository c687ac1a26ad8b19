#include "moelo/model/selfcheck.hpp"

#include <cmath>
#include <random>

#include "moelo/etf/etf_gate.hpp"
#include "moelo/model/moe_model.hpp"
#include "moelo/numkit/gradcheck.hpp"
#include "moelo/seed.hpp"

namespace moelo::model {

namespace {

constexpr double kGradTolerance = 1e-4;

MoEModel toy_model(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.input_dim = 6;
  cfg.encoder_hidden = 12;
  cfg.latent_dim = 8;
  cfg.expert_hidden = 10;
  cfg.expert_dropout = 0.0;
  cfg.r_max = 3;
  cfg.seed = seed;
  MoEModel m = MoEModel::create(cfg);
  const std::vector<ReferencePoint> a{{0, {0, 0, 0}}, {1, {1, 0, 0}}};
  const std::vector<ReferencePoint> b{{2, {2, 0, 0}}, {3, {3, 0, 0}}};
  add_expert(m, 0, a);
  add_expert(m, 1, b);
  return m;
}

}  // namespace

std::vector<CheckLine> gradient_suite(std::uint64_t seed) {
  MoEModel m = toy_model(derive_seed(seed, "gradcheck-model"));
  Matrix x(4, m.config.input_dim);
  Rng rng = make_rng(seed, "gradcheck-input");
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (double& v : x.flat()) v = u(rng);
  const std::vector<std::size_t> labels{0, 3, 1, 2};
  const bool no_dropout[2] = {false, false};

  struct Objective {
    const char* name;
    bool ce;
    bool dr;
  };
  std::vector<CheckLine> out;
  for (const Objective obj : {Objective{"L_DR", false, true}, Objective{"L_CE", true, false},
                              Objective{"L_total", true, true}}) {
    GradRequest req;
    req.use_ce = obj.ce;
    req.use_dr = obj.dr;
    req.experts = {true, true};
    ModelGrads grads;
    forward_backward(m, x, labels, req, no_dropout, 0, &grads);

    std::vector<std::span<double>> params;
    std::vector<std::span<const double>> analytic;
    std::vector<numkit::MlpGrads> zeros;
    zeros.reserve(m.experts.size());
    auto add = [&](numkit::Mlp& net, const numkit::MlpGrads& g) {
      for (auto p : net.params()) params.push_back(p);
      for (auto t : g.tensors()) analytic.push_back(t);
    };
    add(m.encoder, grads.encoder);
    add(m.projection, grads.projection);
    for (std::size_t e = 0; e < m.experts.size(); ++e) {
      if (grads.experts[e]) {
        add(m.experts[e].net, *grads.experts[e]);
      } else {
        zeros.push_back(numkit::MlpGrads::zeros_like(m.experts[e].net));
        add(m.experts[e].net, zeros.back());
      }
    }
    const auto loss = [&] { return forward_backward(m, x, labels, req, no_dropout, 0, nullptr).total; };
    numkit::GradCheckOptions opts;
    opts.tolerance = kGradTolerance;
    const auto report = numkit::grad_check(loss, params, analytic, opts);
    out.push_back({std::string("gradient ") + obj.name, report.passed, report.max_rel_error, kGradTolerance});
  }
  return out;
}

std::vector<CheckLine> etf_suite(std::uint64_t seed) {
  constexpr double kNormTol = 1e-12, kCosTol = 1e-9;
  std::vector<CheckLine> out;
  for (std::size_t k = 2; k <= 16; ++k) {
    const auto frame = etf::generate_etf(k, 64, derive_seed(seed, "etf-check", {k}));
    double norm_err = 0.0, cos_err = 0.0;
    const double target = -1.0 / static_cast<double>(k - 1);
    for (std::size_t i = 0; i < k; ++i) {
      const auto a = frame.anchor(i);
      double n2 = 0.0;
      for (double v : a) n2 += v * v;
      norm_err = std::max(norm_err, std::abs(std::sqrt(n2) - 1.0));
      for (std::size_t j = i + 1; j < k; ++j) {
        const auto b = frame.anchor(j);
        double d = 0.0;
        for (std::size_t t = 0; t < a.size(); ++t) d += a[t] * b[t];
        cos_err = std::max(cos_err, std::abs(d - target));
      }
    }
    const std::string tag = "ETF K=" + std::to_string(k);
    out.push_back({tag + " unit norm", norm_err <= kNormTol, norm_err, kNormTol});
    out.push_back({tag + " pairwise cosine", cos_err <= kCosTol, cos_err, kCosTol});
  }
  return out;
}

}  // namespace moelo::model
