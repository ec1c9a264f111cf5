#include "rockres/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <unordered_set>

#include "rockres/backbone.hpp"
#include "rockres/errors.hpp"
#include "rockres/rng.hpp"

namespace rockres {

const std::vector<std::string>& differentiable_ops() {
  static const std::vector<std::string> ops = {
      "conv2d",     "linear",  "relu",           "gelu", "batch_norm2d", "layer_norm", "channel_layer_norm",
      "softmax",    "max_pool2d", "avg_pool2d",  "global_avg_pool", "add", "mul", "scale",
      "reshape",    "matmul",  "gather_rows",    "sum",  "cross_entropy"};
  return ops;
}

GradcheckScope parse_scope(const std::string& s) {
  if (s == "op") return GradcheckScope::op;
  if (s == "block") return GradcheckScope::block;
  if (s == "model") return GradcheckScope::model;
  throw ConfigError("unknown gradcheck scope '" + s + "' (valid: op, block, model)");
}

GradcheckOptions default_options(GradcheckScope scope) {
  GradcheckOptions o;
  if (scope == GradcheckScope::model) {
    o.step = 1e-6;
    o.max_entries = 8;
  }
  return o;
}

namespace {

double projected(const NDArray<double>& out, const NDArray<double>& r) {
  double s = 0.0;
  for (std::int64_t i = 0; i < out.numel(); ++i) s += out[i] * r[i];
  return s;
}

bool graph_has_op(const Tensor<double>& root, const std::string& op) {
  std::vector<Node<double>*> stack{root.node().get()};
  std::unordered_set<Node<double>*> seen;
  while (!stack.empty()) {
    Node<double>* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    if (op == n->op) return true;
    for (const auto& in : n->inputs) stack.push_back(in.get());
  }
  return false;
}

std::vector<std::int64_t> sample_entries(std::int64_t numel, int max_entries, CounterRng& rng) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(numel));
  std::iota(idx.begin(), idx.end(), 0);
  if (numel <= max_entries) return idx;
  for (std::int64_t i = 0; i < max_entries; ++i) {
    const auto j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(numel - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(max_entries));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

CaseResult run_case(const GradCase& c, const GradcheckOptions& o) {
  CaseResult res;
  res.name = c.name;
  res.op = c.op;
  CounterRng rng(o.seed, hash_string(c.name));

  for (const auto& leaf : c.leaves) {
    leaf.node()->grad = NDArray<double>();
    leaf.node()->requires_grad = true;
  }
  const Tensor<double> out = c.forward();
  if (!c.op.empty()) res.covered = graph_has_op(out, c.op);
  NDArray<double> r(out.shape());
  for (auto& v : r.data()) v = rng.uniform(-1.0, 1.0);
  backward(out, r);
  std::vector<NDArray<double>> analytic;
  for (const auto& leaf : c.leaves) analytic.push_back(leaf.grad());

  NoGradGuard no_grad;
  auto loss = [&] { return projected(c.forward().value(), r); };
  const double l0 = loss();
  for (std::size_t li = 0; li < c.leaves.size(); ++li) {
    Tensor<double> leaf = c.leaves[li];
    for (const auto i : sample_entries(leaf.numel(), o.max_entries, rng)) {
      double& v = leaf.mutable_value()[i];
      const double orig = v;
      v = orig + o.step;
      const double lp = loss();
      v = orig - o.step;
      const double lm = loss();
      v = orig;
      const double numeric = (lp - lm) / (2 * o.step);
      const double a = analytic[li][i];
      const double up = (lp - l0) / o.step, down = (l0 - lm) / o.step;
      if (std::fabs(up - down) > o.kink_tolerance * std::max({std::fabs(up), std::fabs(down), o.floor})) {
        ++res.skipped;
        continue;
      }
      ++res.checked;
      const double err = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), o.floor});
      if (err >= res.max_rel_error) {
        res.max_rel_error = err;
        res.worst = "leaf " + std::to_string(li) + " entry " + std::to_string(i);
      }
    }
  }
  const auto total = res.checked + res.skipped;
  res.passed = res.covered && res.checked > 0 && res.max_rel_error <= o.tolerance &&
               static_cast<double>(res.skipped) <= o.max_skipped_fraction * static_cast<double>(total);
  return res;
}

namespace {

class Gen {
 public:
  explicit Gen(std::uint64_t seed, const std::string& name) : rng_(seed, hash_string(name)) {}
  std::int64_t dim(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(rng_.below(static_cast<std::uint64_t>(hi - lo + 1)));
  }
  double value(double lo, double hi) { return rng_.uniform(lo, hi); }
  Tensor<double> uniform(Shape shape, double lo = -1.0, double hi = 1.0) {
    NDArray<double> a(std::move(shape));
    for (auto& v : a.data()) v = rng_.uniform(lo, hi);
    return Tensor<double>(std::move(a), true);
  }
  /// Magnitudes in [0.1, 1] with random sign, away from the relu kink.
  Tensor<double> away_from_zero(Shape shape) {
    NDArray<double> a(std::move(shape));
    for (auto& v : a.data()) v = (rng_.bernoulli(0.5) ? 1.0 : -1.0) * rng_.uniform(0.1, 1.0);
    return Tensor<double>(std::move(a), true);
  }
  /// Distinct values spaced 0.05 apart in random order, so max pooling has
  /// no ties.
  Tensor<double> distinct(Shape shape) {
    NDArray<double> a(std::move(shape));
    const auto n = a.numel();
    std::vector<double> vals(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) vals[static_cast<std::size_t>(i)] = -1.0 + 0.05 * static_cast<double>(i);
    for (std::int64_t i = n - 1; i > 0; --i) {
      std::swap(vals[static_cast<std::size_t>(i)], vals[rng_.below(static_cast<std::uint64_t>(i + 1))]);
    }
    std::copy(vals.begin(), vals.end(), a.data().begin());
    return Tensor<double>(std::move(a), true);
  }

 private:
  CounterRng rng_;
};

/// Multiplies by `factor` but back-propagates the gradient unscaled.
Tensor<double> faulty_scale(const Tensor<double>& x, double factor) {
  NDArray<double> out = x.value();
  for (auto& v : out.data()) v *= factor;
  return Tensor<double>::from_op(std::move(out), "faulty_scale", {x},
                                 [](const NDArray<double>& g, std::vector<NodePtr<double>>& in) {
                                   if (in[0]->requires_grad) in[0]->accumulate(g);
                                 });
}

using Leaves = std::vector<Tensor<double>>;

GradCase make_case(std::string op, Leaves leaves, std::function<Tensor<double>(const Leaves&)> fn) {
  GradCase c;
  c.name = op;
  c.op = std::move(op);
  c.leaves = std::move(leaves);
  c.forward = [fn = std::move(fn), l = c.leaves] { return fn(l); };
  return c;
}

}  // namespace

std::vector<GradCase> op_cases(std::uint64_t seed, bool inject_fault) {
  std::vector<GradCase> cases;
  {
    Gen g(seed, "conv2d");
    const auto cin = g.dim(1, 2), cout = g.dim(2, 3), s = g.dim(4, 5);
    cases.push_back(make_case("conv2d", {g.uniform({1, cin, s, s}), g.uniform({cout, cin, 3, 3}), g.uniform({cout})},
                              [](const Leaves& l) { return conv2d(l[0], l[1], l[2], 2, 1); }));
  }
  {
    Gen g(seed, "linear");
    const auto n = g.dim(2, 3), din = g.dim(3, 5), dout = g.dim(3, 5);
    cases.push_back(make_case("linear", {g.uniform({n, din}), g.uniform({dout, din}), g.uniform({dout})},
                              [](const Leaves& l) { return linear(l[0], l[1], l[2]); }));
  }
  {
    Gen g(seed, "relu");
    cases.push_back(make_case("relu", {g.away_from_zero({2, g.dim(2, 3), 2, 3})},
                              [](const Leaves& l) { return relu(l[0]); }));
  }
  {
    Gen g(seed, "gelu");
    cases.push_back(make_case("gelu", {g.uniform({2, g.dim(2, 3), 2, 3}, -3.0, 3.0)},
                              [](const Leaves& l) { return gelu(l[0]); }));
  }
  {
    Gen g(seed, "batch_norm2d");
    const auto c = g.dim(2, 3);
    auto state = std::make_shared<BatchNormState<double>>(c);
    cases.push_back(make_case("batch_norm2d", {g.uniform({2, c, 2, 3}), g.uniform({c}, 0.5, 1.5), g.uniform({c})},
                              [state](const Leaves& l) { return batch_norm2d(l[0], l[1], l[2], *state, Mode::train); }));
  }
  {
    Gen g(seed, "layer_norm");
    const auto a = g.dim(2, 3), b = g.dim(3, 4);
    cases.push_back(make_case("layer_norm", {g.uniform({3, a, b}), g.uniform({a, b}, 0.5, 1.5), g.uniform({a, b})},
                              [](const Leaves& l) { return layer_norm(l[0], 2, l[1], l[2]); }));
  }
  {
    Gen g(seed, "channel_layer_norm");
    const auto c = g.dim(2, 4);
    cases.push_back(make_case("channel_layer_norm",
                              {g.uniform({2, c, 2, 3}), g.uniform({c}, 0.5, 1.5), g.uniform({c})},
                              [](const Leaves& l) { return channel_layer_norm(l[0], l[1], l[2]); }));
  }
  {
    Gen g(seed, "softmax");
    cases.push_back(make_case("softmax", {g.uniform({2, g.dim(3, 5), 3}, -2.0, 2.0)},
                              [](const Leaves& l) { return softmax(l[0], 1); }));
  }
  {
    Gen g(seed, "max_pool2d");
    const auto s = g.dim(4, 5);
    cases.push_back(make_case("max_pool2d", {g.distinct({1, 2, s, s})},
                              [](const Leaves& l) { return pool2d(l[0], PoolKind::max, 3, 2, 1); }));
  }
  {
    Gen g(seed, "avg_pool2d");
    const auto s = g.dim(4, 5);
    cases.push_back(make_case("avg_pool2d", {g.uniform({1, 2, s, s})},
                              [](const Leaves& l) { return pool2d(l[0], PoolKind::avg, 3, 2, 1); }));
  }
  {
    Gen g(seed, "global_avg_pool");
    cases.push_back(make_case("global_avg_pool", {g.uniform({2, g.dim(2, 3), 3, 3})},
                              [](const Leaves& l) { return global_avg_pool(l[0]); }));
  }
  {
    Gen g(seed, "add");
    const Shape s{2, g.dim(2, 3), 4};
    cases.push_back(make_case("add", {g.uniform(s), g.uniform(s)}, [](const Leaves& l) { return add(l[0], l[1]); }));
  }
  {
    Gen g(seed, "mul");
    const Shape s{2, g.dim(2, 3), 4};
    cases.push_back(make_case("mul", {g.uniform(s), g.uniform(s)}, [](const Leaves& l) { return mul(l[0], l[1]); }));
  }
  {
    Gen g(seed, "scale");
    cases.push_back(make_case("scale", {g.uniform({3, g.dim(3, 5)})}, [](const Leaves& l) { return scale(l[0], -0.7); }));
  }
  {
    Gen g(seed, "reshape");
    const auto a = g.dim(2, 3);
    cases.push_back(make_case("reshape", {g.uniform({a, 3, 4})},
                              [a](const Leaves& l) { return reshape(l[0], {3, a * 4}); }));
  }
  {
    Gen g(seed, "matmul");
    const auto m = g.dim(2, 3), k = g.dim(3, 4), n = g.dim(2, 4);
    // Transposed, batch-broadcast right operand.
    cases.push_back(make_case("matmul", {g.uniform({2, m, k}), g.uniform({1, n, k})},
                              [](const Leaves& l) { return matmul(l[0], l[1], false, true); }));
  }
  {
    Gen g(seed, "gather_rows");
    const auto rows = g.dim(3, 5);
    std::vector<std::int64_t> idx{0, rows - 1, 1, rows - 1, 0};
    cases.push_back(make_case("gather_rows", {g.uniform({rows, 3})},
                              [idx](const Leaves& l) { return gather_rows(l[0], idx); }));
  }
  {
    Gen g(seed, "sum");
    cases.push_back(make_case("sum", {g.uniform({3, g.dim(3, 5)})}, [](const Leaves& l) { return sum(l[0]); }));
  }
  {
    Gen g(seed, "cross_entropy");
    const auto k = g.dim(3, 6);
    std::vector<std::int32_t> labels{0, static_cast<std::int32_t>(k - 1), 1, 2};
    cases.push_back(make_case("cross_entropy", {g.uniform({4, k}, -2.0, 2.0)},
                              [labels](const Leaves& l) { return cross_entropy(l[0], labels); }));
  }
  if (inject_fault) {
    Gen g(seed, "faulty_scale");
    cases.push_back(make_case("faulty_scale", {g.uniform({3, 4})},
                              [](const Leaves& l) { return faulty_scale(l[0], 2.5); }));
  }
  return cases;
}

namespace {

/// Random values for every parameter so that zero-initialized projections
/// and unit norm scales do not hide gradient paths.
template <typename Params>
void randomize(const Params& params, Gen& g) {
  for (const auto& p : params) {
    auto& v = p.tensor.node()->value;
    const bool is_scale = p.name.ends_with("weight") && v.rank() == 1;
    for (auto& x : v.data()) x = is_scale ? g.value(0.5, 1.5) : g.value(-0.5, 0.5);
  }
}

GradCase block_case(const std::string& name, const BlockVariant& variant, std::int64_t in_size,
                    std::uint64_t seed) {
  const std::int64_t out_size = (in_size + 2 - 3) / variant.stride + 1;
  auto block = std::make_shared<ResidualBlock<double>>(
      ResidualBlock<double>::build(variant, name, InitContext{seed}, out_size, out_size));
  Gen g(seed, name);
  std::vector<NamedTensor<double>> params;
  block->collect_parameters(params);
  randomize(params, g);
  GradCase c;
  c.name = name;
  c.leaves.push_back(g.uniform({2, variant.channels_in, in_size, in_size}));
  for (const auto& p : params) c.leaves.push_back(p.tensor);
  c.forward = [block, x = c.leaves[0]] { return block->forward(x, Mode::train); };
  return c;
}

}  // namespace

std::vector<GradCase> block_cases(std::uint64_t seed) {
  std::vector<GradCase> cases;
  BlockVariant v;
  v.channels_in = v.channels_out = 8;
  cases.push_back(block_case("basic", v, 4, seed));
  v.channels_in = 4;
  v.stride = 2;
  cases.push_back(block_case("basic_projection", v, 6, seed));
  for (int level = 1; level <= 4; ++level) {
    BlockVariant m = v;
    m.kind = BlockKind::modified_kernel;
    m.flags = ModFlags::ladder(level);
    cases.push_back(block_case("modified_kernel_level" + std::to_string(level), m, 6, seed));
  }
  BlockVariant b;
  b.kind = BlockKind::bot;
  b.channels_in = b.channels_out = 8;
  b.heads = 4;
  cases.push_back(block_case("bot", b, 3, seed));
  b.kind = BlockKind::bot_irc;
  cases.push_back(block_case("bot_irc", b, 3, seed));
  return cases;
}

std::vector<GradCase> model_cases(std::uint64_t seed) {
  struct Spec {
    const char* name;
    int kmod;
    int bot;
    bool irc;
    Mode mode;
  };
  const Spec specs[] = {{"model_baseline", 0, 0, false, Mode::eval},
                        {"model_baseline_train", 0, 0, false, Mode::train},
                        {"model_kernel_mod4", 4, 0, false, Mode::eval},
                        {"model_bot2", 0, 2, false, Mode::eval},
                        {"model_bot2_irc", 0, 2, true, Mode::eval}};
  std::vector<GradCase> cases;
  for (const auto& s : specs) {
    ModelConfig cfg;
    cfg.num_classes = 3;
    cfg.input_height = cfg.input_width = 64;
    cfg.base_width = 4;
    cfg.kernel_mod = s.kmod;
    cfg.bot_blocks = s.bot;
    cfg.irc = s.irc;
    cfg.seed = seed;
    auto net = std::make_shared<Network<double>>(cfg);
    Gen g(seed, s.name);
    // Zero-initialized attention outputs would hide the attention path;
    // convolution weights keep their fan-in scaled init.
    for (const auto& p : net->parameters()) {
      if (p.tensor.shape().size() == 4 && !p.name.ends_with("output.weight")) continue;
      randomize(std::vector<NamedTensor<double>>{p}, g);
    }
    GradCase c;
    c.name = s.name;
    c.op = "cross_entropy";
    c.leaves.push_back(g.uniform({2, 3, 64, 64}));
    for (const auto& p : net->parameters()) c.leaves.push_back(p.tensor);
    c.forward = [net, x = c.leaves[0], mode = s.mode] {
      const std::int32_t labels[] = {0, 2};
      return cross_entropy(net->forward(x, mode), labels);
    };
    cases.push_back(std::move(c));
  }
  return cases;
}

bool GradcheckReport::passed() const {
  return !cases.empty() &&
         std::all_of(cases.begin(), cases.end(), [](const CaseResult& c) { return c.passed; });
}

std::string GradcheckReport::to_text() const {
  std::string out;
  char line[256];
  for (const auto& c : cases) {
    std::snprintf(line, sizeof line, "%-28s max_rel_error=%.3e checked=%lld skipped=%lld %s%s\n", c.name.c_str(),
                  c.max_rel_error, static_cast<long long>(c.checked), static_cast<long long>(c.skipped),
                  c.passed ? "PASS" : "FAIL", c.covered ? "" : " (op not on graph)");
    out += line;
  }
  return out;
}

GradcheckReport run_gradcheck(const std::vector<GradCase>& cases, const GradcheckOptions& options,
                              const std::function<void(const CaseResult&)>& on_case) {
  GradcheckReport report;
  for (const auto& c : cases) {
    report.cases.push_back(run_case(c, options));
    if (on_case) on_case(report.cases.back());
  }
  return report;
}

GradcheckReport run_gradcheck(GradcheckScope scope, const GradcheckOptions& options, bool inject_fault,
                              const std::function<void(const CaseResult&)>& on_case) {
  switch (scope) {
    case GradcheckScope::op: return run_gradcheck(op_cases(options.seed, inject_fault), options, on_case);
    case GradcheckScope::block: return run_gradcheck(block_cases(options.seed), options, on_case);
    case GradcheckScope::model: return run_gradcheck(model_cases(options.seed), options, on_case);
  }
  return {};
}

}  // namespace rockres
