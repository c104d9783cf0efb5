// Copyright 2026 The Preformer Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "preformer/grad_suite.hpp"

#include <algorithm>
#include <cmath>

#include "preformer/ctc.hpp"
#include "preformer/layers.hpp"
#include "preformer/model.hpp"
#include "preformer/training.hpp"

namespace preformer {

GradCheckReport grad_check_params(const GraphFunction& f, const ModelParams& params,
                                  const GradCheckOptions& opts) {
  const std::vector<std::string> paths = params.paths();
  GradientMap analytic;
  {
    Graph graph(params, GradMode::kAll);
    const Var out = f(graph);
    graph.tape().backward(out);
    graph.accumulate_grads(analytic);
  }
  auto evaluate = [&](const ModelParams& probe) {
    Graph graph(probe, GradMode::kNone);
    const double v = f(graph).item();
    if (!std::isfinite(v)) throw NumericError("grad_check: objective is not finite");
    return v;
  };

  GradCheckReport report;
  ModelParams probe = params;
  for (std::size_t p = 0; p < paths.size(); ++p) {
    Matrix& value = probe.value(paths[p]);
    const auto it = analytic.find(paths[p]);
    for (Index i = 0; i < value.size(); ++i) {
      const double original = value.data()[i];
      value.data()[i] = original + opts.step;
      const double plus = evaluate(probe);
      value.data()[i] = original - opts.step;
      const double minus = evaluate(probe);
      value.data()[i] = original;

      const double numeric = (plus - minus) / (2.0 * opts.step);
      const double exact = it == analytic.end() ? 0.0 : it->second.data()[i];
      const double denom = std::max({std::abs(numeric), std::abs(exact), opts.abs_floor});
      const double rel = std::abs(numeric - exact) / denom;
      ++report.scalars_checked;
      if (rel >= report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p;
        report.worst_index = i;
        report.analytic = exact;
        report.numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error <= opts.tol;
  return report;
}

namespace {

constexpr Index kFrames = 5;
constexpr Index kTokens = 4;

AttentionConfig small_attention() { return {8, 2, 12}; }

// Moves every parameter off its initial value so unit gains and zero biases
// do not hide mistakes.
void jitter(ModelParams& params, Rng& rng) {
  for (const std::string& path : params.paths()) {
    Matrix& v = params.value(path);
    v += normal_matrix(v.rows(), v.cols(), 0.2, rng);
  }
}

// Fixed random projection of the output onto a scalar.
Var project(Graph& graph, const Var& out, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(out, graph.constant(normal_matrix(out.rows(), out.cols(), 1.0, rng))));
}

NamedGradCheck check(const std::string& name, ModelParams params, Rng& rng, const GraphFunction& f,
                     const GradCheckOptions& opts) {
  jitter(params, rng);
  return {name, grad_check_params(f, params, opts)};
}

}  // namespace

std::vector<NamedGradCheck> gradient_suite(std::uint64_t seed, const GradCheckOptions& opts) {
  Rng rng(seed);
  const AttentionConfig cfg = small_attention();
  const std::uint64_t proj_seed = seed + 1;
  std::vector<NamedGradCheck> out;

  auto with_inputs = [&](ModelParams& params) {
    params.add("input.x", normal_matrix(kTokens, cfg.d_model, 1.0, rng));
    params.add("input.memory", normal_matrix(kFrames, cfg.d_model, 1.0, rng));
  };

  {
    ModelParams params;
    const SelfLayer layer{"self", cfg};
    layer.init(params, rng);
    with_inputs(params);
    out.push_back(check("self_layer", params, rng, [&](Graph& g) {
      return project(g, layer.forward(g, g.param("input.x")), proj_seed);
    }, opts));
  }
  {
    ModelParams params;
    const CrossLayer layer{"cross", cfg};
    layer.init(params, rng);
    with_inputs(params);
    out.push_back(check("cross_layer", params, rng, [&](Graph& g) {
      return project(g, layer.forward(g, g.param("input.x"), g.param("input.memory")), proj_seed);
    }, opts));
  }
  {
    ModelParams params;
    const VanillaDecoderLayer layer{"vanilla", cfg};
    layer.init(params, rng);
    with_inputs(params);
    out.push_back(check("vanilla_decoder_layer", params, rng, [&](Graph& g) {
      return project(g, layer.forward(g, g.param("input.x"), g.param("input.memory")), proj_seed);
    }, opts));
  }
  {
    ModelParams params;
    const EncoderLayer layer{"enc", cfg};
    layer.init(params, rng);
    with_inputs(params);
    out.push_back(check("encoder_layer", params, rng, [&](Graph& g) {
      return project(g, layer.forward(g, g.param("input.memory")), proj_seed);
    }, opts));
  }
  {
    EncoderConfig ecfg;
    ecfg.d_feat = 3;
    ecfg.conv = {{6, 3, 2}, {8, 2, 1}};
    ecfg.attn = cfg;
    ecfg.layers = 1;
    const W2vEncoder encoder(ecfg);
    ModelParams params;
    encoder.init(params, rng);
    params.add("input.feats", normal_matrix(7, ecfg.d_feat, 1.0, rng));
    out.push_back(check("w2v_encoder", params, rng, [&](Graph& g) {
      return project(g, encoder.forward(g, g.param("input.feats")), proj_seed);
    }, opts));
  }
  const Vocab vocab{3};
  const std::vector<int> tokens{vocab.sos(), 0, 2, 1};
  for (DecoderKind kind : {DecoderKind::kOcd, DecoderKind::kTcd, DecoderKind::kVanilla}) {
    DecoderConfig dcfg;
    dcfg.kind = kind;
    dcfg.attn = cfg;
    dcfg.layers = 1;
    dcfg.max_len = 8;
    const Decoder decoder(dcfg, vocab);
    ModelParams params;
    decoder.init(params, rng);
    with_inputs(params);
    out.push_back(check(std::string("decoder_") + to_string(kind), params, rng, [&](Graph& g) {
      return project(g, decoder.forward(g, tokens, g.param("input.memory")), proj_seed);
    }, opts));
  }
  {
    ModelParams params;
    params.add("input.logits", normal_matrix(kTokens, vocab.size(), 1.0, rng));
    const std::vector<int> targets{0, 2, 1, vocab.eos()};
    out.push_back(check("ce_loss", params, rng, [&](Graph& g) {
      return ce_loss(g.param("input.logits"), targets);
    }, opts));
    out.push_back(check("ce_loss_smoothed", params, rng, [&](Graph& g) {
      return ce_loss(g.param("input.logits"), targets, 0.1);
    }, opts));
  }
  {
    ModelParams params;
    params.add("input.logits", normal_matrix(kFrames + 1, vocab.ctc_size(), 1.0, rng));
    const std::vector<int> target{1, 1, 0};
    out.push_back(check("ctc_loss", params, rng, [&](Graph& g) {
      return *ctc_loss(log_softmax(g.param("input.logits")), target, vocab.blank());
    }, opts));
  }
  return out;
}

}  // namespace preformer
