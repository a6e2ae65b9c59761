#include "multicos/nn.hpp"

#include <cmath>

namespace multicos {

Tensor ParamStore::add(std::string name, Tensor t, bool trainable) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
  t.set_requires_grad(trainable);
  index_[name] = entries_.size();
  entries_.push_back({std::move(name), t, trainable});
  return t;
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return entries_[it->second].tensor;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

NamedTensors ParamStore::snapshot() const {
  NamedTensors out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.emplace_back(e.name, e.tensor.clone());
  return out;
}

void ParamStore::load(const NamedTensors& values, bool strict) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : values) by_name[name] = &t;
  for (auto& e : entries_) {
    auto it = by_name.find(e.name);
    if (it == by_name.end()) {
      if (strict) throw ConfigError("checkpoint lacks parameter " + e.name);
      continue;
    }
    if (it->second->shape() != e.tensor.shape()) {
      throw ShapeMismatch("checkpoint entry " + e.name + " has shape " + shape_str(it->second->shape()) +
                          ", expected " + shape_str(e.tensor.shape()));
    }
    auto dst = e.tensor.mutable_data();
    const auto& src = it->second->values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

int64_t ParamStore::parameter_count() const {
  int64_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) n += e.tensor.numel();
  }
  return n;
}

ParamBuilder::ParamBuilder(ParamStore& store, std::mt19937_64& rng, std::string prefix)
    : store_(&store), rng_(&rng), prefix_(std::move(prefix)) {}

ParamBuilder ParamBuilder::scope(std::string_view name) const {
  return ParamBuilder(*store_, *rng_, full(name));
}

std::string ParamBuilder::full(std::string_view name) const {
  if (prefix_.empty()) return std::string(name);
  return prefix_ + "." + std::string(name);
}

Tensor ParamBuilder::uniform(std::string_view name, Shape shape, int64_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<int64_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) v = dist(*rng_);
  return store_->add(full(name), t, true);
}

Tensor ParamBuilder::constant(std::string_view name, Shape shape, double value) {
  return store_->add(full(name), Tensor(std::move(shape), value), true);
}

Tensor ParamBuilder::values(std::string_view name, Shape shape, std::vector<double> values) {
  return store_->add(full(name), Tensor(std::move(shape), std::move(values)), true);
}

Tensor ParamBuilder::buffer(std::string_view name, Shape shape, double value) {
  return store_->add(full(name), Tensor(std::move(shape), value), false);
}

Conv2d::Conv2d(ParamBuilder pb, int64_t in, int64_t out, int64_t kernel, Conv2dOptions o, bool with_bias) : opt(o) {
  const int64_t fan_in = in / opt.groups * kernel * kernel;
  weight = pb.uniform("weight", {out, in / opt.groups, kernel, kernel}, fan_in);
  if (with_bias) bias = pb.constant("bias", {out}, 0.0);
}

Conv2dOptions Conv2d::same(int64_t kernel, int64_t dilation, int64_t groups) {
  Conv2dOptions o;
  o.padding = dilation * (kernel - 1) / 2;
  o.dilation = dilation;
  o.groups = groups;
  return o;
}

Tensor Conv2d::operator()(const Tensor& x) const { return conv2d(x, weight, bias, opt); }

BatchNorm2d::BatchNorm2d(ParamBuilder pb, int64_t channels) {
  gamma = pb.constant("gamma", {channels}, 1.0);
  beta = pb.constant("beta", {channels}, 0.0);
  running_mean = pb.buffer("running_mean", {channels}, 0.0);
  running_var = pb.buffer("running_var", {channels}, 1.0);
}

Tensor BatchNorm2d::operator()(const Tensor& x, bool training) const {
  // Finite-difference probes re-run the forward pass; running statistics
  // only move while gradients are being recorded.
  if (training && !grad_enabled()) {
    Tensor rm = running_mean.clone(), rv = running_var.clone();
    return batch_norm(x, gamma, beta, rm, rv, true);
  }
  return batch_norm(x, gamma, beta, running_mean, running_var, training);
}

LayerNorm::LayerNorm(ParamBuilder pb, int64_t channels) {
  gamma = pb.constant("gamma", {channels}, 1.0);
  beta = pb.constant("beta", {channels}, 0.0);
}

ConvBlock::ConvBlock(ParamBuilder pb, int64_t in, int64_t out, int64_t kernel, int64_t stride) {
  Conv2dOptions o = Conv2d::same(kernel);
  o.stride = stride;
  conv = Conv2d(pb.scope("conv"), in, out, kernel, o);
  bn = BatchNorm2d(pb.scope("bn"), out);
}

Tensor ConvBlock::operator()(const Tensor& x, bool training) const {
  return bn(leaky_relu(conv(x)), training);
}

Tensor pointwise(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias) {
  Tensor w = weight.rank() == 4 ? weight : reshape(weight, {weight.dim(0), weight.dim(1), 1, 1});
  return conv2d(x, w, bias);
}

Adam::Adam(const ParamStore& store, AdamOptions opt) : opt_(opt) {
  for (const auto& e : store.entries()) {
    if (!e.trainable) continue;
    slots_.push_back({e.name, e.tensor, Tensor::zeros(e.tensor.shape()), Tensor::zeros(e.tensor.shape())});
  }
}

void Adam::step() {
  ++steps_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(steps_));
  for (auto& s : slots_) {
    if (!s.param.has_grad()) continue;
    const std::vector<double> g = s.param.grad();
    auto p = s.param.mutable_data();
    auto m = s.m.mutable_data();
    auto v = s.v.mutable_data();
    for (size_t i = 0; i < g.size(); ++i) {
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
    }
  }
}

NamedTensors Adam::state() const {
  NamedTensors out;
  out.emplace_back("optim.step", Tensor::scalar(static_cast<double>(steps_)));
  for (const auto& s : slots_) {
    out.emplace_back("optim.m." + s.name, s.m.clone());
    out.emplace_back("optim.v." + s.name, s.v.clone());
  }
  return out;
}

void Adam::load_state(const NamedTensors& values) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : values) by_name[name] = &t;
  auto fetch = [&](const std::string& name, Tensor& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("optimizer state lacks " + name);
    if (it->second->shape() != dst.shape()) throw ShapeMismatch("optimizer state " + name);
    std::copy(it->second->values().begin(), it->second->values().end(), dst.mutable_data().begin());
  };
  auto it = by_name.find("optim.step");
  if (it == by_name.end()) throw ConfigError("optimizer state lacks optim.step");
  steps_ = static_cast<int64_t>(it->second->item());
  for (auto& s : slots_) {
    fetch("optim.m." + s.name, s.m);
    fetch("optim.v." + s.name, s.v);
  }
}

}  // namespace multicos
