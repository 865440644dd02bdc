// Copyright 2026 The LPNAS Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "lpnas/gradcheck.h"

#include <cmath>

#include "lpnas/ops.h"
#include "lpnas/rng.h"

namespace lpnas {

namespace {

double Evaluate(const LossBuilder& loss) {
  Tape<double> tape(/*grad_enabled=*/false);
  return loss(tape).value()[0];
}

}  // namespace

GradCheckResult FiniteDiffCheck(std::vector<Parameter<double>*> params, const LossBuilder& loss,
                                double epsilon) {
  if (!(epsilon > 0)) throw InvalidArgument("FiniteDiffCheck: epsilon must be > 0");
  for (auto* p : params) p->ZeroGrad();
  {
    Tape<double> tape;
    Var<double> l = loss(tape);
    tape.Backward(l);
  }
  GradCheckResult r;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + epsilon;
      const double up = Evaluate(loss);
      p->value[i] = saved - epsilon;
      const double down = Evaluate(loss);
      p->value[i] = saved;
      const double numeric = (up - down) / (2 * epsilon);
      const double analytic = p->grad[i];
      const double err = std::fabs(analytic - numeric) / (std::fabs(analytic) + 1e-12);
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst_parameter = p->name;
        r.worst_index = i;
        r.worst_analytic = analytic;
        r.worst_numeric = numeric;
      }
    }
  }
  return r;
}

GradCheckResult finite_diff_check(Network<double>& network, const Tensor<double>& input,
                                  const FiniteDiffOptions& options) {
  Rng rng(HashSeed({options.seed, 0x9c}));
  Tensor<double> x = input;
  Tensor<double> out_weights;
  const std::uint64_t dropout_seed = HashSeed({options.seed, 0xd0});

  auto forward = [&](Tape<double>& tape) {
    Rng dropout(dropout_seed);
    ForwardContext<double> ctx;
    ctx.tape = &tape;
    ctx.mode = options.train_mode ? ExecMode::kTrain : ExecMode::kEval;
    ctx.dropout_rng = &dropout;
    ctx.update_running_stats = false;
    return network.Forward(ctx, tape.Constant(x));
  };

  for (int attempt = 0;; ++attempt) {
    Tape<double> probe(/*grad_enabled=*/false);
    probe.set_track_kinks(true);
    Var<double> out = forward(probe);
    // Perturbations of size epsilon must not reach a kink either.
    const double kink = probe.min_kink_distance();
    if (kink >= options.kink_margin) {
      out_weights = Tensor<double>(out.shape());
      Rng wr(HashSeed({options.seed, 0x77}));
      for (double& w : out_weights.vec()) w = wr.Normal();
      auto loss = [&](Tape<double>& tape) {
        return weighted_sum(forward(tape), out_weights);
      };
      GradCheckResult r = FiniteDiffCheck(network.Parameters(), loss, options.epsilon);
      r.kink_distance = kink;
      r.redraws = attempt;
      return r;
    }
    if (attempt >= options.max_redraws) {
      throw InvalidArgument("finite_diff_check: no kink-free input after " +
                            std::to_string(attempt) + " redraws");
    }
    for (double& v : x.vec()) v = rng.Normal();
  }
}

}  // namespace lpnas
