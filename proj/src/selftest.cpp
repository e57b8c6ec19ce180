#include "sleepdet/selftest.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>

#include "sleepdet/gradcheck.hpp"
#include "sleepdet/label_remap.hpp"
#include "sleepdet/model.hpp"

namespace sleepdet::ad {

namespace {

using ShapeCheck = std::function<double(std::mt19937_64&)>;

std::shared_ptr<Tensor<double>> probe(std::vector<int64_t> shape, std::mt19937_64& rng) {
  return std::make_shared<Tensor<double>>(randn<double>(std::move(shape), rng, 1.0));
}

double check_conv(std::mt19937_64& rng) {
  std::uniform_int_distribution<int64_t> chan(1, 4), time(4, 18), kern(0, 2), dil(1, 3),
      grp(0, 2);
  const int64_t k = 2 * kern(rng) + 1;
  const int dilation = static_cast<int>(dil(rng));
  int64_t cin = chan(rng), cout = chan(rng);
  int groups = 1;
  const int64_t mode = grp(rng);
  if (mode == 1) {  // depthwise
    cout = cin;
    groups = static_cast<int>(cin);
  } else if (mode == 2 && cin % 2 == 0) {
    cout = 2 * chan(rng);
    groups = 2;
  }
  const int64_t t = time(rng);
  auto w = probe({cout, t}, rng);
  return grad_check(
             [&](Graph<double>& g, const std::vector<NodePtr<double>>& in) {
               return weighted_sum(g, conv1d(g, in[0], in[1], in[2], dilation, groups), w);
             },
             {randn<double>({cin, t}, rng, 1.0),
              randn<double>({cout, cin / groups, k}, rng, 1.0),
              randn<double>({cout}, rng, 1.0)})
      .max_rel_error;
}

double check_maxpool(std::mt19937_64& rng) {
  std::uniform_int_distribution<int64_t> chan(1, 4), winw(1, 5), reps(2, 6);
  const int64_t wdt = winw(rng);
  const int64_t t = wdt * reps(rng);
  const int64_t c = chan(rng);
  auto w = probe({c, t / wdt}, rng);
  return grad_check(
             [&](Graph<double>& g, const std::vector<NodePtr<double>>& in) {
               return weighted_sum(g, maxpool1d(g, in[0], static_cast<int>(wdt)), w);
             },
             {randn<double>({c, t}, rng, 1.0)})
      .max_rel_error;
}

template <typename OpFn>
ShapeCheck elementwise(OpFn op) {
  return [op](std::mt19937_64& rng) {
    std::uniform_int_distribution<int64_t> chan(1, 5), time(2, 16);
    const int64_t c = chan(rng), t = time(rng);
    auto w = probe({c, t}, rng);
    return grad_check(
               [&](Graph<double>& g, const std::vector<NodePtr<double>>& in) {
                 return weighted_sum(g, op(g, in[0]), w);
               },
               {randn<double>({c, t}, rng, 1.0)})
        .max_rel_error;
  };
}

double check_weight_norm(std::mt19937_64& rng) {
  std::uniform_int_distribution<int64_t> chan(1, 5), rest(1, 4), kern(1, 3);
  const int64_t c = chan(rng), r = rest(rng), k = kern(rng);
  auto w = probe({c, r, k}, rng);
  return grad_check(
             [&](Graph<double>& g, const std::vector<NodePtr<double>>& in) {
               return weighted_sum(g, weight_norm(g, in[0], in[1]), w);
             },
             {randn<double>({c, r, k}, rng, 1.0), randn<double>({c}, rng, 0.7)})
      .max_rel_error;
}

double check_batch_norm(std::mt19937_64& rng) {
  std::uniform_int_distribution<int64_t> chan(1, 4), time(4, 16), pick(0, 1);
  const int64_t c = chan(rng), t = time(rng);
  const Mode mode = pick(rng) ? Mode::train : Mode::eval;
  auto w = probe({c, t}, rng);
  return grad_check(
             [&](Graph<double>& g, const std::vector<NodePtr<double>>& in) {
               auto rm = std::make_shared<Tensor<double>>(Tensor<double>::zeros({c}));
               auto rv = std::make_shared<Tensor<double>>(Tensor<double>::full({c}, 1.0));
               return weighted_sum(
                   g, batch_norm(g, in[0], in[1], in[2], {rm.get(), rv.get()}, mode), w);
             },
             {randn<double>({c, t}, rng, 1.0), randn<double>({c}, rng, 0.8),
              randn<double>({c}, rng, 0.8)})
      .max_rel_error;
}

double check_positionwise(std::mt19937_64& rng) {
  std::uniform_int_distribution<int64_t> chan(2, 6), time(2, 12);
  const int64_t c = chan(rng), t = time(rng);
  auto w = probe({c, t}, rng);
  return grad_check(
             [&](Graph<double>& g, const std::vector<NodePtr<double>>& in) {
               return weighted_sum(g, positionwise_norm(g, in[0]), w);
             },
             {randn<double>({c, t}, rng, 1.0)})
      .max_rel_error;
}

double check_bilstm(std::mt19937_64& rng) {
  std::uniform_int_distribution<int64_t> chan(1, 3), time(2, 6), hidden(1, 4);
  const int64_t c = chan(rng), t = time(rng), h = hidden(rng);
  auto w = probe({2 * h, t}, rng);
  return grad_check(
             [&](Graph<double>& g, const std::vector<NodePtr<double>>& in) {
               LstmDirectionWeights<double> f{in[1], in[2], in[3]};
               LstmDirectionWeights<double> b{in[4], in[5], in[6]};
               return weighted_sum(g, bilstm(g, in[0], f, b), w);
             },
             {randn<double>({c, t}, rng, 1.0), randn<double>({4 * h, c}, rng, 0.5),
              randn<double>({4 * h, h}, rng, 0.5), randn<double>({4 * h}, rng, 0.5),
              randn<double>({4 * h, c}, rng, 0.5), randn<double>({4 * h, h}, rng, 0.5),
              randn<double>({4 * h}, rng, 0.5)})
      .max_rel_error;
}

double check_concat_add(std::mt19937_64& rng) {
  std::uniform_int_distribution<int64_t> chan(1, 3), time(2, 10);
  const int64_t c1 = chan(rng), c2 = chan(rng), t = time(rng);
  auto w = probe({c1 + c2 + c1, t}, rng);
  return grad_check(
             [&](Graph<double>& g, const std::vector<NodePtr<double>>& in) {
               auto both = add(g, in[0], in[2]);
               return weighted_sum(g, concat_channels(g, {both, in[1], in[0]}), w);
             },
             {randn<double>({c1, t}, rng, 1.0), randn<double>({c2, t}, rng, 1.0),
              randn<double>({c1, t}, rng, 1.0)})
      .max_rel_error;
}

double check_softmax_loss(std::mt19937_64& rng) {
  std::uniform_int_distribution<int64_t> time(2, 12);
  std::uniform_int_distribution<int> binpick(0, 4);
  const int64_t t = time(rng);
  std::vector<bins::OutputBin> labels;
  for (int64_t i = 0; i < t; ++i) {
    const int r = binpick(rng);
    labels.push_back(r == 0   ? bins::OutputBin::ignore
                     : r == 1 ? bins::OutputBin::wake
                     : r == 2 ? bins::OutputBin::apnea_hypopnea
                     : r == 3 ? bins::OutputBin::normal_sleep
                              : bins::OutputBin::target_arousal);
  }
  return grad_check(
             [&](Graph<double>& g, const std::vector<NodePtr<double>>& in) {
               return bins::multitask_loss(g, softmax_channels(g, in[0]), labels);
             },
             {randn<double>({4, t}, rng, 1.0)})
      .max_rel_error;
}

double check_dropout(std::mt19937_64& rng) {
  std::uniform_int_distribution<int64_t> chan(1, 4), time(2, 12);
  const int64_t c = chan(rng), t = time(rng);
  const uint64_t mask_seed = rng();
  auto w = probe({c, t}, rng);
  return grad_check(
             [&](Graph<double>& g, const std::vector<NodePtr<double>>& in) {
               std::mt19937_64 mask_rng(mask_seed);  // same mask every rebuild
               return weighted_sum(g, dropout(g, in[0], 0.3, mask_rng, Mode::train), w);
             },
             {randn<double>({c, t}, rng, 1.0)})
      .max_rel_error;
}

double check_dcu2_block(std::mt19937_64& rng) {
  net::ModelConfig cfg = net::ModelConfig::desk_scale(8, 4);
  std::uniform_int_distribution<int64_t> time(2, 8);
  std::uniform_int_distribution<int> dil(1, 4);
  const int64_t t = time(rng);
  const int dilation = dil(rng);
  auto params = net::DrcnnParams<double>::init(cfg, rng());
  // Check at a generic point: fresh zero offsets sit exactly on the selu
  // kink once batch norm meets a constant row (two-channel position-wise
  // normalization emits +-1 rows), where the map is not differentiable.
  std::normal_distribution<double> jitter(0.0, 0.05);
  for (auto& e : params.entries)
    if (e.learnable)
      for (auto& v : e.tensor.data) v += jitter(rng);

  std::vector<Tensor<double>> inputs;
  std::vector<size_t> learnable_pos;
  for (size_t i = 0; i < params.entries.size(); ++i) {
    const auto& e = params.entries[i];
    if (e.name.rfind("dcu2.0.", 0) == 0 && e.learnable) {
      learnable_pos.push_back(i);
      inputs.push_back(e.tensor);
    }
  }
  inputs.push_back(randn<double>({8, t}, rng, 1.0));
  auto w = probe({8, t}, rng);

  return grad_check(
             [&](Graph<double>& g, const std::vector<NodePtr<double>>& leaves) {
               net::DrcnnParams<double> scratch = params;
               net::Drcnn<double> model(cfg, scratch);
               net::BoundParams<double> bp;
               bp.store = &scratch;
               for (size_t i = 0; i < scratch.entries.size(); ++i)
                 if (scratch.entries[i].learnable)
                   bp.nodes.emplace(scratch.entries[i].name, g.param(scratch.entries[i].tensor));
               for (size_t k = 0; k < learnable_pos.size(); ++k)
                 bp.nodes[scratch.entries[learnable_pos[k]].name] = leaves[k];
               auto y = model.dcu_unit(g, bp, leaves.back(), "dcu2.0", 2, dilation, true,
                                       Mode::train);
               return weighted_sum(g, y, w);
             },
             std::move(inputs))
      .max_rel_error;
}

}  // namespace

SelftestReport run_gradient_selftest(uint64_t seed, int shapes_per_op) {
  const auto t0 = std::chrono::steady_clock::now();
  struct Entry {
    const char* name;
    double tolerance;
    ShapeCheck check;
  };
  const std::vector<Entry> ops = {
      {"conv1d", 1e-4, check_conv},
      {"maxpool1d", 1e-4, check_maxpool},
      {"selu", 1e-4, elementwise([](Graph<double>& g, NodePtr<double> x) { return selu(g, x); })},
      {"relu", 1e-4, elementwise([](Graph<double>& g, NodePtr<double> x) { return relu(g, x); })},
      {"tanh", 1e-4,
       elementwise([](Graph<double>& g, NodePtr<double> x) { return tanh_op(g, x); })},
      {"weight_norm", 1e-4, check_weight_norm},
      {"batch_norm", 1e-4, check_batch_norm},
      {"positionwise_norm", 1e-4, check_positionwise},
      {"bilstm", 1e-3, check_bilstm},
      {"concat+add", 1e-4, check_concat_add},
      {"softmax", 1e-4,
       elementwise([](Graph<double>& g, NodePtr<double> x) { return softmax_channels(g, x); })},
      {"softmax+multitask_loss", 1e-4, check_softmax_loss},
      {"dropout", 1e-4, check_dropout},
      {"dcu2_block", 1e-3, check_dcu2_block},
  };

  SelftestReport report;
  report.all_pass = true;
  uint64_t op_index = 0;
  for (const auto& op : ops) {
    SelftestItem item;
    item.op = op.name;
    item.tolerance = op.tolerance;
    std::mt19937_64 rng(seed + 7919 * ++op_index);
    for (int s = 0; s < shapes_per_op; ++s) {
      item.max_rel_error = std::max(item.max_rel_error, op.check(rng));
      ++item.shapes;
    }
    item.pass = item.max_rel_error < item.tolerance;
    report.all_pass = report.all_pass && item.pass;
    report.items.push_back(std::move(item));
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

std::string format_selftest(const SelftestReport& report) {
  std::string out = "Gradient self-test (central differences, float64, h=1e-5)\n";
  char buf[160];
  for (const auto& item : report.items) {
    std::snprintf(buf, sizeof buf, "  %-24s %2d shapes   max rel err %.3e   tol %.0e   %s\n",
                  item.op.c_str(), item.shapes, item.max_rel_error, item.tolerance,
                  item.pass ? "ok" : "FAIL");
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%s in %.1f s\n", report.all_pass ? "ALL OK" : "FAILURES",
                report.seconds);
  out += buf;
  return out;
}

}  // namespace sleepdet::ad
