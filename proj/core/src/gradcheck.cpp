#include "arcslot/gradcheck.hpp"

#include <cmath>

#include "arcslot/error.hpp"
#include "arcslot/rng.hpp"

namespace arcslot {

float fd_rel_err(float a, float b, float denom_floor) {
  // Floored relative error, |a-b| / (floor + max(|a|,|b|)): float32 central
  // differences carry an absolute noise floor of ~ulp(loss)/2h, so near-zero
  // gradients are compared absolutely at the floor scale.
  const float denom = denom_floor + std::max(std::fabs(a), std::fabs(b));
  return std::fabs(a - b) / denom;
}

namespace {

double eval_scalar(const std::function<Node(Tape&, Node)>& f, Tensor& x) {
  Tape t;
  Node loss = f(t, t.leaf(&x));
  if (t.val(loss).numel() != 1)
    throw ContractError("check_gradients: f is not scalar-valued, got " + t.val(loss).shape_str());
  return static_cast<double>(t.val(loss).data[0]);
}

}  // namespace

GradCheckReport check_gradients(const std::function<Node(Tape&, Node)>& f, Tensor& x,
                                float h, float tol, float denom_floor) {
  const bool saved_rg = x.requires_grad;
  x.requires_grad = true;
  x.ensure_grad();
  x.zero_grad();

  Tape t;
  Node loss = f(t, t.leaf(&x));
  if (t.val(loss).numel() != 1)
    throw ContractError("check_gradients: f is not scalar-valued, got " + t.val(loss).shape_str());
  t.backward(loss);
  std::vector<float> tape_grad = x.grad;

  GradCheckReport rep;
  rep.checked = x.data.size();
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const float v = x.data[i];
    x.data[i] = v + h;
    const float vp = x.data[i];
    const double fp = eval_scalar(f, x);
    x.data[i] = v - h;
    const float vm = x.data[i];
    const double fm = eval_scalar(f, x);
    x.data[i] = v;
    const double step = static_cast<double>(vp) - static_cast<double>(vm);
    const float fd = (step != 0.0) ? static_cast<float>((fp - fm) / step) : 0.f;
    const float rel = fd_rel_err(tape_grad[i], fd, denom_floor);
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_index = i;
    }
  }
  rep.pass = rep.max_rel_err < tol;
  x.requires_grad = saved_rg;
  return rep;
}

SampledGradCheckReport check_gradients_sampled(
    const std::function<Node(Tape&)>& build_loss,
    std::span<const std::pair<std::string, Tensor*>> params,
    int total_samples, float h, float tol, std::uint64_t seed, float denom_floor) {
  for (const auto& [name, p] : params) {
    p->ensure_grad();
    p->zero_grad();
  }
  Tape t;
  Node loss = build_loss(t);
  if (t.val(loss).numel() != 1)
    throw ContractError("check_gradients_sampled: loss is not scalar");
  t.backward(loss);

  std::vector<std::vector<float>> tape_grads;
  tape_grads.reserve(params.size());
  std::int64_t total = 0;
  for (const auto& [name, p] : params) {
    tape_grads.push_back(p->grad.empty() ? std::vector<float>(p->data.size(), 0.f) : p->grad);
    total += p->numel();
  }

  auto eval = [&]() {
    Tape t2;
    Node l = build_loss(t2);
    return static_cast<double>(t2.val(l).data[0]);
  };

  Rng rng(seed);
  SampledGradCheckReport rep;
  for (int s = 0; s < total_samples; ++s) {
    std::int64_t flat = static_cast<std::int64_t>(rng.next_u32()) % total;
    std::size_t which = 0;
    while (flat >= params[which].second->numel()) {
      flat -= params[which].second->numel();
      ++which;
    }
    Tensor& p = *params[which].second;
    const std::size_t i = static_cast<std::size_t>(flat);
    const float v = p.data[i];
    p.data[i] = v + h;
    const float vp = p.data[i];
    const double fp = eval();
    p.data[i] = v - h;
    const float vm = p.data[i];
    const double fm = eval();
    p.data[i] = v;
    const double step = static_cast<double>(vp) - static_cast<double>(vm);
    const float fd = (step != 0.0) ? static_cast<float>((fp - fm) / step) : 0.f;
    const float rel = fd_rel_err(tape_grads[which][i], fd, denom_floor);
    ++rep.checked;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_param = params[which].first;
      rep.worst_index = i;
    }
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

}  // namespace arcslot
