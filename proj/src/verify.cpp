#include "multicos/verify.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "multicos/bfser.hpp"
#include "multicos/ckler.hpp"
#include "multicos/errors.hpp"
#include "multicos/losses.hpp"

namespace multicos {

namespace {

Tensor random(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (double& x : v) x = d(rng);
  return Tensor(std::move(shape), std::move(v));
}

Tensor leaf(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t = random(rng, std::move(shape), lo, hi);
  t.set_requires_grad(true);
  return t;
}

// Fresh initialisations leave many blocks near symmetric points (zero biases,
// unit norms) where a check is weak; moving every parameter a little avoids it.
void perturb(ParamStore& store, std::mt19937_64& rng, double amount) {
  std::uniform_real_distribution<double> u(-amount, amount);
  for (const auto& e : store.entries()) {
    if (!e.trainable) continue;
    Tensor t = e.tensor;
    for (double& v : t.mutable_data()) v += u(rng);
  }
}

std::vector<Tensor> with_params(std::vector<Tensor> inputs, const ParamStore& store) {
  for (const auto& e : store.entries())
    if (e.trainable) inputs.push_back(e.tensor);
  return inputs;
}

SSMConfig small_ssm() {
  SSMConfig c;
  c.d_model = 8;
  c.d_inner = 16;
  c.state_dim = 4;
  return c;
}

struct Setup {
  std::function<Tensor()> f;
  std::vector<Tensor> inputs;
  GradCheckOptions opt;
};

GradCheckReport execute(Setup s, uint64_t seed, double tol, bool corrupt) {
  s.opt.tol = tol;
  s.opt.seed = seed;
  if (corrupt) {
    // Same forward value, but the tape sees an extra linear term in the first
    // input that the finite differences cannot.
    std::mt19937_64 rng(seed + 1);
    const Tensor x = s.inputs.front();
    const Tensor k = random(rng, x.shape(), 0.5, 1.0);
    auto f = s.f;
    s.f = [f, x, k] { return f() + sum(x * k) - sum(x.detach() * k); };
  }
  return grad_check(s.f, s.inputs, s.opt);
}

using Builder = std::function<Setup(std::mt19937_64& rng, ParamStore& store)>;

GradientBlock block(std::string name, double tol, Builder build) {
  return {name, tol, [name, tol, build](uint64_t seed, bool corrupt) {
            std::seed_seq seq(name.begin(), name.end());
            std::vector<uint32_t> mix(1);
            seq.generate(mix.begin(), mix.end());
            std::mt19937_64 rng(seed ^ (static_cast<uint64_t>(mix[0]) << 17));
            auto store = std::make_shared<ParamStore>();
            Setup s = build(rng, *store);
            // The closures hold tensors that share storage with the store.
            auto f = s.f;
            s.f = [f, store] { return f(); };
            return execute(std::move(s), seed, tol, corrupt);
          }};
}

std::vector<GradientBlock> build_registry() {
  std::vector<GradientBlock> r;

  r.push_back(block("lsfm", 1e-4, [](std::mt19937_64& rng, ParamStore& store) {
    auto m = std::make_shared<LSFM>(ParamBuilder(store, rng), 6);
    perturb(store, rng, 0.3);
    Tensor fi = leaf(rng, {2, 6, 4, 4}), fu = leaf(rng, {2, 6, 4, 4}), probe = random(rng, {2, 6, 4, 4});
    return Setup{[=] { return sum((*m)(fi, fu, true) * probe); }, with_params({fi, fu}, store), {}};
  }));

  r.push_back(block("ffm", 1e-4, [](std::mt19937_64& rng, ParamStore& store) {
    auto m = std::make_shared<FFM>(ParamBuilder(store, rng), 4);
    perturb(store, rng, 0.3);
    Tensor fu = leaf(rng, {2, 4, 4, 4}), fx = leaf(rng, {2, 4, 4, 4}), probe = random(rng, {2, 4, 4, 4});
    return Setup{[=] { return sum((*m)(fu, fx, true) * probe); }, with_params({fu, fx}, store), {}};
  }));

  r.push_back(block("gate", 1e-4, [](std::mt19937_64& rng, ParamStore& store) {
    auto g = std::make_shared<GateWeights>(ParamBuilder(store, rng), 6, false);
    perturb(store, rng, 0.3);
    // Central differences straddling a LeakyReLU kink are meaningless, so the
    // input is redrawn until both passes stay clear of it.
    auto kink = [&](const Tensor& x) {
      NoGradGuard guard;
      const Tensor a = g->signal(x), b = g->signal(x + leaky_relu(a));
      double d = 1e300;
      for (const Tensor* t : {&a, &b})
        for (double v : t->values()) d = std::min(d, std::abs(v));
      return d;
    };
    Tensor x = random(rng, {2, 6, 3, 4});
    while (kink(x) < 1e-3) x = random(rng, {2, 6, 3, 4});
    x.set_requires_grad(true);
    Shape out;
    {
      NoGradGuard guard;
      out = (*g)(x).shape();
    }
    Tensor probe = random(rng, out);
    return Setup{[=] { return sum((*g)(x) * probe); }, with_params({x}, store), {}};
  }));

  for (auto kind : {Discretization::kTaylor, Discretization::kZoh}) {
    const std::string name = kind == Discretization::kZoh ? "selective_scan.zoh" : "selective_scan.taylor";
    r.push_back(block(name, 1e-4, [kind](std::mt19937_64& rng, ParamStore&) {
      Tensor u = leaf(rng, {2, 5, 3}), dt = leaf(rng, {2, 5, 3}, 0.05, 0.8), a = leaf(rng, {3, 2}, -2.0, -0.2);
      Tensor b = leaf(rng, {2, 5, 2}), c = leaf(rng, {2, 5, 2}), probe = random(rng, {2, 5, 3});
      return Setup{[=] { return sum(selective_scan(u, dt, a, b, c, kind) * probe); }, {u, dt, a, b, c}, {}};
    }));
  }

  r.push_back(block("ssm_block", 1e-4, [](std::mt19937_64& rng, ParamStore& store) {
    auto m = std::make_shared<SSMBlock>(ParamBuilder(store, rng), small_ssm());
    perturb(store, rng, 0.3);
    Tensor x = leaf(rng, {1, 8, 3, 3}), probe = random(rng, {1, 8, 3, 3});
    return Setup{[=] { return sum((*m)(x) * probe); }, with_params({x}, store), {}};
  }));

  r.push_back(block("cssm", 1e-4, [](std::mt19937_64& rng, ParamStore& store) {
    auto m = std::make_shared<CSSMBlock>(ParamBuilder(store, rng), small_ssm());
    perturb(store, rng, 0.2);
    Tensor fn = leaf(rng, {1, 8, 3, 3}), fx = leaf(rng, {1, 8, 3, 3}), probe = random(rng, {1, 8, 3, 3});
    return Setup{[=] { return sum((*m)(fn, fx) * probe); }, with_params({fn, fx}, store), {}};
  }));

  r.push_back(block("ssfm", 1e-4, [](std::mt19937_64& rng, ParamStore& store) {
    auto m = std::make_shared<SSFM>(ParamBuilder(store, rng), 6, small_ssm(), FusionSwitches{});
    perturb(store, rng, 0.2);
    Tensor fi = leaf(rng, {2, 6, 3, 3}), fu = leaf(rng, {2, 6, 3, 3}), probe = random(rng, {2, 8, 3, 3});
    GradCheckOptions opt;
    opt.max_elements_per_input = 8;
    return Setup{[=] { return sum((*m)(fi, fu, true) * probe); }, with_params({fi, fu}, store), opt};
  }));

  r.push_back(block("aspp", 1e-4, [](std::mt19937_64& rng, ParamStore& store) {
    auto m = std::make_shared<ASPP>(ParamBuilder(store, rng), 6, 8, std::array<int64_t, 3>{1, 2, 4});
    perturb(store, rng, 0.3);
    Tensor x = leaf(rng, {2, 6, 5, 6}), probe = random(rng, {2, 1, 5, 6});
    return Setup{[=] { return sum((*m)(x) * probe); }, with_params({x}, store), {}};
  }));

  r.push_back(block("decoder", 1e-4, [](std::mt19937_64& rng, ParamStore& store) {
    auto m = std::make_shared<Decoder>(ParamBuilder(store, rng), 6);
    perturb(store, rng, 0.3);
    std::vector<Tensor> skips;
    for (int64_t side : {16, 8, 4, 2}) skips.push_back(leaf(rng, {2, 6, side, side}));
    Tensor coarse = leaf(rng, {2, 1, 2, 2});
    std::vector<Tensor> probes;
    for (int64_t side : {16, 8, 4, 2}) probes.push_back(random(rng, {2, 1, side, side}));
    for (int64_t side : {16, 8, 4, 2}) probes.push_back(random(rng, {2, 1, side, side}));
    auto f = [=] {
      const SegmentationOutput o = (*m)(coarse, skips, true);
      Tensor total = sum(o.masks[0] * probes[0]);
      for (size_t k = 1; k < 4; ++k) total = total + sum(o.masks[k] * probes[k]);
      for (size_t k = 0; k < 4; ++k) total = total + sum(o.edges[k] * probes[4 + k]);
      return total;
    };
    std::vector<Tensor> inputs{coarse};
    inputs.insert(inputs.end(), skips.begin(), skips.end());
    GradCheckOptions opt;
    opt.max_elements_per_input = 6;
    return Setup{f, with_params(inputs, store), opt};
  }));

  r.push_back(block("losses", 1e-4, [](std::mt19937_64& rng, ParamStore&) {
    std::vector<Tensor> masks, edges;
    for (int64_t side : {8, 4, 2, 1, 1}) masks.push_back(leaf(rng, {2, 1, side, side}, -2.0, 2.0));
    for (int64_t side : {8, 4, 2, 1}) edges.push_back(leaf(rng, {2, 1, side, side}, -2.0, 2.0));
    Tensor mask({2, 1, 16, 16}), edge({2, 1, 16, 16});
    for (int64_t i = 0; i < 16; ++i)
      for (int64_t j = 0; j < 16; ++j) {
        const bool in = std::abs(i - 7.5) + std::abs(j - 6.5) < 6.0;
        const bool rim = in && std::abs(i - 7.5) + std::abs(j - 6.5) > 4.5;
        for (int64_t b = 0; b < 2; ++b) {
          mask.mutable_data()[static_cast<size_t>((b * 16 + i) * 16 + j)] = in ? 1.0 : 0.0;
          edge.mutable_data()[static_cast<size_t>((b * 16 + i) * 16 + j)] = rim ? 1.0 : 0.0;
        }
      }
    Tensor target = random(rng, {2, 1, 8, 8}, 0.0, 1.0);
    auto f = [=] {
      SegmentationOutput o{masks, edges};
      return segmentation_loss(o, mask, edge) + l1_loss(sigmoid(masks[0]), target);
    };
    std::vector<Tensor> inputs = masks;
    inputs.insert(inputs.end(), edges.begin(), edges.end());
    return Setup{f, inputs, {}};
  }));

  r.push_back(block("ckler", 1e-4, [](std::mt19937_64& rng, ParamStore& store) {
    CKLerConfig cfg;
    cfg.widths = {2, 3, 3, 4};
    auto net = std::make_shared<CKLer>(ParamBuilder(store, rng, "ckler"), cfg);
    perturb(store, rng, 0.3);
    Tensor x = leaf(rng, {2, 3, 16, 16}), target = random(rng, {2, 1, 16, 16}, 0.0, 1.0);
    Tensor probe = random(rng, {2, 4, 1, 1});
    GradCheckOptions opt;
    opt.max_elements_per_input = 6;
    auto f = [=] {
      const Translation t = net->translate(x, true);
      return translation_loss(t.x_u, target) + mean(t.z * probe);
    };
    return Setup{f, with_params({x}, store), opt};
  }));

  r.push_back(block("knowledge_injection", 1e-4, [](std::mt19937_64& rng, ParamStore& store) {
    auto inj = std::make_shared<KnowledgeInjection>(ParamBuilder(store, rng, "inject"), 3, 4);
    perturb(store, rng, 0.3);
    Tensor fu = leaf(rng, {2, 4, 5, 6}), z = leaf(rng, {2, 3, 3, 4}), probe = random(rng, {2, 4, 5, 6});
    return Setup{[=] { return sum((*inj)(fu, z, true) * probe); }, with_params({fu, z}, store), {}};
  }));

  r.push_back(block("bfser_end_to_end", 1e-3, [](std::mt19937_64& rng, ParamStore& store) {
    BFSerConfig cfg;
    cfg.widths = {4, 6, 6, 8, 8};
    cfg.ssm = small_ssm();
    auto net = std::make_shared<BFSer>(ParamBuilder(store, rng, "bfser"), cfg);
    perturb(store, rng, 0.1);
    Tensor xi = leaf(rng, {2, 3, 16, 16}), xu = leaf(rng, {2, 1, 16, 16});
    std::vector<Tensor> probes;
    {
      NoGradGuard guard;
      const SegmentationOutput shape = net->forward(xi, xu, true);
      for (const auto& m : shape.masks) probes.push_back(random(rng, m.shape()));
      for (const auto& e : shape.edges) probes.push_back(random(rng, e.shape()));
    }
    auto f = [=] {
      const SegmentationOutput o = net->forward(xi, xu, true);
      Tensor total = sum(o.masks[0] * probes[0]);
      for (size_t k = 1; k < o.masks.size(); ++k) total = total + sum(o.masks[k] * probes[k]);
      for (size_t k = 0; k < o.edges.size(); ++k) total = total + sum(o.edges[k] * probes[o.masks.size() + k]);
      return total;
    };
    GradCheckOptions opt;
    opt.max_elements_per_input = 2;
    return Setup{f, with_params({xi, xu}, store), opt};
  }));

  return r;
}

bool listed(const std::vector<std::string>& names, const std::string& n) {
  return std::find(names.begin(), names.end(), n) != names.end();
}

}  // namespace

const std::vector<GradientBlock>& gradient_blocks() {
  static const std::vector<GradientBlock> registry = build_registry();
  return registry;
}

std::vector<BlockResult> run_gradient_suite(uint64_t seed, const std::vector<std::string>& corrupt,
                                            const std::vector<std::string>& only) {
  for (const auto* names : {&corrupt, &only})
    for (const auto& n : *names) {
      const bool known = std::any_of(gradient_blocks().begin(), gradient_blocks().end(),
                                     [&](const GradientBlock& b) { return b.name == n; });
      if (!known) throw ConfigError("no differentiable block named '" + n + "'");
    }
  std::vector<BlockResult> out;
  for (const auto& b : gradient_blocks()) {
    if (!only.empty() && !listed(only, b.name)) continue;
    const GradCheckReport rep = b.run(seed, listed(corrupt, b.name));
    out.push_back({b.name, b.tol, rep.passed, rep.max_error, rep.probed});
  }
  return out;
}

}  // namespace multicos
