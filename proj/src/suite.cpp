// SPDX-License-Identifier: Apache-2.0
#include "mmfusion/suite.hpp"

#include <algorithm>
#include <memory>

#include "mmfusion/fusion.hpp"
#include "mmfusion/gradcheck.hpp"
#include "mmfusion/rng.hpp"

namespace mmf {

double GradientSuiteReport::max_relative_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_relative_error);
  return m;
}

namespace {

Tensor uniform_tensor(Shape shape, Rng& rng, bool grad) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_data(std::move(shape), std::move(v), grad);
}

// Random linear functional of the output, so every output coordinate matters.
Tensor probe(const Tensor& y, const Tensor& weights) { return sum(mul(y, weights)); }

struct Instance {
  std::string name;
  std::function<Tensor()> output;
  std::vector<NamedTensor> params;
};

Instance make_instance(std::size_t index, Rng& rng) {
  const std::size_t batch = 1 + rng.uniform_index(2), time = 3 + rng.uniform_index(4);
  const std::size_t feat = 1 + rng.uniform_index(3), width = 2 + rng.uniform_index(3);
  Instance in;
  auto x = uniform_tensor({batch, time, feat}, rng, true);
  auto add_input = [&](const Tensor& t, const char* name = "x") { in.params.push_back({name, t}); };
  auto layer_instance = [&](std::shared_ptr<Layer> layer) {
    in.name = std::string(layer->kind());
    layer->collect_parameters(in.name, in.params);
    add_input(x);
    in.output = [layer, x] {
      ForwardContext ctx;
      return layer->forward(x, ctx);
    };
  };
  static constexpr Activation kActs[] = {Activation::kNone, Activation::kRelu, Activation::kSigmoid,
                                         Activation::kTanh, Activation::kSoftmax};
  switch (index % 10) {
    case 0:
      layer_instance(std::make_shared<Dense>(feat, width, kActs[rng.uniform_index(5)], rng));
      break;
    case 1:
      layer_instance(std::make_shared<Conv1D>(feat, width, 1 + rng.uniform_index(3), 1 + rng.uniform_index(2),
                                              rng.bernoulli(0.5) ? Activation::kRelu : Activation::kNone, rng));
      break;
    case 2: {
      auto conv = std::make_shared<Conv1D>(feat, width, 2, 1, Activation::kNone, rng);
      const std::size_t window = 1 + rng.uniform_index(2);
      conv->collect_parameters("Conv", in.params);
      add_input(x);
      in.name = "MaxP";
      in.output = [conv, x, window] {
        ForwardContext ctx;
        return max_pool1d(conv->forward(x, ctx), window);
      };
      break;
    }
    case 3: layer_instance(std::make_shared<LSTM>(feat, width, rng)); break;
    case 4: layer_instance(std::make_shared<GRU>(feat, width, rng)); break;
    case 5: layer_instance(std::make_shared<SelfAttentionLayer>(feat, width, rng)); break;
    case 6: {
      const auto form = rng.bernoulli(0.5) ? CrossAttentionForm::kStandard : CrossAttentionForm::kQueryValueFromA;
      const std::size_t feat_b = 1 + rng.uniform_index(3);
      const std::size_t time_b = form == CrossAttentionForm::kStandard ? 2 + rng.uniform_index(4) : time;
      auto b = uniform_tensor({batch, time_b, feat_b}, rng, true);
      const std::size_t value_dim = form == CrossAttentionForm::kStandard ? feat_b : feat;
      auto head = std::make_shared<AttentionHead>(feat, feat_b, value_dim, width, rng);
      head->collect("cross", in.params);
      add_input(x, "a");
      add_input(b, "b");
      in.name = std::string("CrossATT/") + std::string(cross_attention_form_name(form));
      in.output = [head, x, b, form] { return cross_attention(*head, x, b, form).output; };
      break;
    }
    case 7: {
      const std::size_t heads = 1 + rng.uniform_index(2);
      const std::size_t dim = heads * (1 + rng.uniform_index(2));
      auto block = std::make_shared<TransformerEncoderBlock>(dim, heads, 2 + rng.uniform_index(3), rng);
      auto xs = uniform_tensor({batch, time, dim}, rng, true);
      std::vector<double> mask(batch * time, 1.0);
      mask.back() = 0.0;
      block->collect_parameters("Encoder", in.params);
      add_input(xs);
      in.name = "Encoder";
      in.output = [block, xs, mask] { return block->forward(xs, mask); };
      break;
    }
    case 8: {
      auto table = std::make_shared<Embedding>(6, width, rng);
      std::vector<std::int32_t> ids(batch * time);
      for (auto& id : ids) id = static_cast<std::int32_t>(rng.uniform_index(6));
      std::vector<double> mask(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) mask[i] = ids[i] == 0 && i % time != 0 ? 0.0 : 1.0;
      table->collect_parameters("Embed", in.params);
      in.name = "Embed";
      in.output = [table, ids, mask, batch, time] { return masked_mean_pool(table->forward(ids, batch, time), mask); };
      break;
    }
    default: {
      auto gain = uniform_tensor({feat + 1}, rng, true), bias = uniform_tensor({feat + 1}, rng, true);
      auto xs = uniform_tensor({batch, time, feat + 1}, rng, true);
      in.params = {{"gain", gain}, {"bias", bias}, {"x", xs}};
      in.name = "LayerNorm";
      in.output = [gain, bias, xs] { return layer_norm(xs, gain, bias); };
      break;
    }
  }
  return in;
}

FusionConfig suite_config(int group, BaseModel base) {
  FusionConfig c;
  c.group = group;
  c.base = base;
  c.filters = 6;
  c.units = 5;
  c.attention_dim = 5;
  c.embedding_dim = 6;
  c.max_len = 16;
  c.vocab_size = 40;
  c.encoder_blocks = 1;
  c.encoder_heads = 2;
  c.encoder_ff = 8;
  c.cross_dim = 5;
  c.head_units = 8;
  return c;
}

}  // namespace

GradientSuiteReport run_gradient_suite(const GradientSuiteOptions& options) {
  GradientSuiteReport report;
  report.tolerance = options.tolerance;
  Rng rng = Rng::derive(options.seed, 1);

  // Aggregate per layer kind.
  std::vector<GradientSuiteEntry> kinds;
  auto entry_for = [&](const std::string& name) -> GradientSuiteEntry& {
    for (auto& e : kinds)
      if (e.name == name) return e;
    kinds.push_back({name, 0.0, 0, 0});
    return kinds.back();
  };
  for (std::size_t i = 0; i < options.layer_instances; ++i) {
    Instance in = make_instance(i, rng);
    const Tensor y = in.output();
    const Tensor weights = uniform_tensor(y.shape(), rng, false);
    auto r = grad_check([&] { return probe(in.output(), weights); }, in.params,
                        {.stencil = DifferenceStencil::kRidders, .seed = options.seed + i});
    auto& e = entry_for("layer " + in.name);
    e.max_relative_error = std::max(e.max_relative_error, r.max_relative_error);
    e.checked += r.per_parameter_errors.size();
    e.rejected += r.rejected;
  }
  report.entries = std::move(kinds);

  if (options.models) {
    const auto prepared = prepare(generate_synthetic({.n = 24, .seed = options.seed}),
                                  {.max_len = 16, .vocab_size = 40, .seed = options.seed});
    const std::vector<std::size_t> rows{0, 1, 2};
    const Batch batch = make_batch(prepared.data, rows, 16);
    for (int group = 1; group <= 4; ++group) {
      for (BaseModel base : {BaseModel::kCnn, BaseModel::kLstm, BaseModel::kGru, BaseModel::kAtt}) {
        auto model = build_model(suite_config(group, base), Rng::mix(options.seed, static_cast<std::uint64_t>(group)));
        ForwardContext ctx;
        const auto params = model.parameters();
        auto r = grad_check([&] { return cross_entropy_loss(model.forward(batch, ctx), batch.labels); }, params,
                            {.stencil = DifferenceStencil::kRidders,
                             .max_samples = options.samples_per_model,
                             .seed = options.seed + 7});
        report.entries.push_back({"model G" + std::to_string(group) + " " + std::string(base_model_name(base)),
                                  r.max_relative_error, r.per_parameter_errors.size(), r.rejected});
      }
    }
  }
  return report;
}

}  // namespace mmf
