#include "lecnav/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace lecnav::ad {

std::atomic<long> Node::live_count{0};

long live_node_count() { return Node::live_count.load(); }

namespace {

thread_local bool g_grad_enabled = true;

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

int shape_numel(const std::vector<int>& s) {
  int n = 1;
  for (int d : s) n *= d;
  return n;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
  }
}

std::shared_ptr<Node> make_node(std::vector<int> shape, std::vector<double> value) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

// Wires the node into the graph when recording is on and an input needs grads.
Tensor finish(std::shared_ptr<Node> n, std::vector<std::shared_ptr<Node>> parents,
              std::function<void(Node&)> backfn) {
  bool track = false;
  if (g_grad_enabled) {
    for (const auto& p : parents)
      if (p->requires_grad) track = true;
  }
  if (track) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backfn = std::move(backfn);
  }
  return Tensor(std::move(n));
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(const std::vector<int>& shape) {
  return Tensor(make_node(shape, std::vector<double>(shape_numel(shape), 0.0)));
}

Tensor Tensor::constant(std::vector<double> data, const std::vector<int>& shape) {
  if (static_cast<int>(data.size()) != shape_numel(shape))
    throw ConfigError("constant: data length " + std::to_string(data.size()) +
                      " does not match shape " + shape_str(shape));
  return Tensor(make_node(shape, std::move(data)));
}

Tensor Tensor::constant(std::vector<double> data) {
  int n = static_cast<int>(data.size());
  return Tensor(make_node({n}, std::move(data)));
}

Tensor Tensor::scalar(double v) { return Tensor(make_node({1}, {v})); }

Tensor Tensor::param(std::vector<double> data, const std::vector<int>& shape) {
  Tensor t = constant(std::move(data), shape);
  t.node()->requires_grad = true;
  t.node()->ensure_grad();
  return t;
}

const std::vector<double>& Tensor::grad() const {
  n_->ensure_grad();
  return n_->grad;
}

void Tensor::zero_grad() {
  n_->grad.assign(n_->value.size(), 0.0);
}

double Tensor::item() const {
  if (size() != 1) throw ConfigError("item: tensor has " + std::to_string(size()) + " elements");
  return n_->value[0];
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> out(a.data());
  for (int i = 0; i < a.size(); ++i) out[i] += b.data()[i];
  auto pa = a.node(), pb = b.node();
  return finish(make_node(a.shape(), std::move(out)), {pa, pb}, [pa, pb](Node& n) {
    for (auto& p : {pa, pb}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> out(a.data());
  for (int i = 0; i < a.size(); ++i) out[i] -= b.data()[i];
  auto pa = a.node(), pb = b.node();
  return finish(make_node(a.shape(), std::move(out)), {pa, pb}, [pa, pb](Node& n) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto pa = a.node(), pb = b.node();
  return finish(make_node(a.shape(), std::move(out)), {pa, pb}, [pa, pb](Node& n) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data());
  for (double& x : out) x *= c;
  auto pa = a.node();
  return finish(make_node(a.shape(), std::move(out)), {pa}, [pa, c](Node& n) {
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += c * n.grad[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2)
    throw ConfigError("matmul: left operand must be rank-2, got " + shape_str(a.shape()));
  const int m = a.shape()[0], k = a.shape()[1];
  if (b.shape().size() == 1) {
    if (b.shape()[0] != k)
      throw ConfigError("matmul: inner dims differ, " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
    std::vector<double> out(m, 0.0);
    const double* A = a.data().data();
    const double* x = b.data().data();
    for (int i = 0; i < m; ++i) {
      double acc = 0.0;
      const double* row = A + i * k;
      for (int j = 0; j < k; ++j) acc += row[j] * x[j];
      out[i] = acc;
    }
    auto pa = a.node(), pb = b.node();
    return finish(make_node({m}, std::move(out)), {pa, pb}, [pa, pb, m, k](Node& n) {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (int i = 0; i < m; ++i) {
          const double g = n.grad[i];
          if (g == 0.0) continue;
          double* row = pa->grad.data() + i * k;
          const double* x = pb->value.data();
          for (int j = 0; j < k; ++j) row[j] += g * x[j];
        }
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (int i = 0; i < m; ++i) {
          const double g = n.grad[i];
          if (g == 0.0) continue;
          const double* row = pa->value.data() + i * k;
          for (int j = 0; j < k; ++j) pb->grad[j] += g * row[j];
        }
      }
    });
  }
  if (b.shape().size() != 2 || b.shape()[0] != k)
    throw ConfigError("matmul: inner dims differ, " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  const int nn = b.shape()[1];
  std::vector<double> out(static_cast<size_t>(m) * nn, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j) {
      const double av = a.data()[i * k + j];
      if (av == 0.0) continue;
      for (int c = 0; c < nn; ++c) out[i * nn + c] += av * b.data()[j * nn + c];
    }
  auto pa = a.node(), pb = b.node();
  return finish(make_node({m, nn}, std::move(out)), {pa, pb}, [pa, pb, m, k, nn](Node& n) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j) {
          double acc = 0.0;
          for (int c = 0; c < nn; ++c) acc += n.grad[i * nn + c] * pb->value[j * nn + c];
          pa->grad[i * k + j] += acc;
        }
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j) {
          const double av = pa->value[i * k + j];
          if (av == 0.0) continue;
          for (int c = 0; c < nn; ++c) pb->grad[j * nn + c] += av * n.grad[i * nn + c];
        }
    }
  });
}

namespace {

template <typename F, typename DF>
Tensor unary_op(const Tensor& a, F f, DF df) {
  std::vector<double> out(a.size());
  for (int i = 0; i < a.size(); ++i) out[i] = f(a.data()[i]);
  auto pa = a.node();
  return finish(make_node(a.shape(), std::move(out)), {pa}, [pa, df](Node& n) {
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      pa->grad[i] += n.grad[i] * df(pa->value[i], n.value[i]);
  });
}

}  // namespace

Tensor tanh(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softmax(const Tensor& a) {
  if (a.shape().size() != 1) throw ConfigError("softmax: rank-1 input required");
  double mx = a.data()[0];
  for (double v : a.data()) mx = std::max(mx, v);
  std::vector<double> out(a.size());
  double z = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    out[i] = std::exp(a.data()[i] - mx);
    z += out[i];
  }
  for (double& v : out) v /= z;
  auto pa = a.node();
  return finish(make_node(a.shape(), std::move(out)), {pa}, [pa](Node& n) {
    pa->ensure_grad();
    double dot = 0.0;
    for (size_t i = 0; i < n.grad.size(); ++i) dot += n.grad[i] * n.value[i];
    for (size_t i = 0; i < n.grad.size(); ++i)
      pa->grad[i] += n.value[i] * (n.grad[i] - dot);
  });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ConfigError("concat: no inputs");
  std::vector<double> out;
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<int> offsets;
  for (const auto& p : parts) {
    if (p.shape().size() != 1) throw ConfigError("concat: rank-1 inputs required");
    offsets.push_back(static_cast<int>(out.size()));
    out.insert(out.end(), p.data().begin(), p.data().end());
    parents.push_back(p.node());
  }
  const int total = static_cast<int>(out.size());
  return finish(make_node({total}, std::move(out)), parents, [parents, offsets](Node& n) {
    for (size_t k = 0; k < parents.size(); ++k) {
      auto& p = parents[k];
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (size_t i = 0; i < p->value.size(); ++i) p->grad[i] += n.grad[offsets[k] + i];
    }
  });
}

Tensor slice(const Tensor& a, int start, int len) {
  if (a.shape().size() != 1) throw ConfigError("slice: rank-1 input required");
  if (start < 0 || len < 0 || start + len > a.size())
    throw ConfigError("slice: range [" + std::to_string(start) + "," +
                      std::to_string(start + len) + ") out of bounds for size " +
                      std::to_string(a.size()));
  std::vector<double> out(a.data().begin() + start, a.data().begin() + start + len);
  auto pa = a.node();
  return finish(make_node({len}, std::move(out)), {pa}, [pa, start](Node& n) {
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[start + i] += n.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  auto pa = a.node();
  return finish(make_node({1}, {s}), {pa}, [pa](Node& n) {
    pa->ensure_grad();
    for (double& g : pa->grad) g += n.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  const double inv = 1.0 / a.size();
  auto pa = a.node();
  return finish(make_node({1}, {s * inv}), {pa}, [pa, inv](Node& n) {
    pa->ensure_grad();
    for (double& g : pa->grad) g += n.grad[0] * inv;
  });
}

Tensor square(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor scale_to_norm(const Tensor& a, double target_norm) {
  if (a.shape().size() != 1) throw ConfigError("scale_to_norm: rank-1 input required");
  double sq = 0.0;
  for (double v : a.data()) sq += v * v;
  const double r = std::max(std::sqrt(sq), 1e-12);
  const double c = target_norm / r;
  std::vector<double> out(a.data());
  for (double& v : out) v *= c;
  auto pa = a.node();
  return finish(make_node(a.shape(), std::move(out)), {pa},
                [pa, r, target_norm](Node& n) {
                  pa->ensure_grad();
                  // out_i = t*v_i/r; d out_i/d v_j = t*(delta_ij/r - v_i v_j / r^3)
                  double gv = 0.0;
                  for (size_t i = 0; i < n.grad.size(); ++i) gv += n.grad[i] * pa->value[i];
                  const double t = target_norm;
                  for (size_t i = 0; i < n.grad.size(); ++i)
                    pa->grad[i] += t * (n.grad[i] / r - pa->value[i] * gv / (r * r * r));
                });
}

Tensor kld(const Tensor& p_logits, const std::vector<double>& q_probs) {
  if (p_logits.shape().size() != 1)
    throw ConfigError("kld: rank-1 logits required");
  if (q_probs.size() != static_cast<size_t>(p_logits.size()))
    throw ConfigError("kld: logits length " + std::to_string(p_logits.size()) +
                      " vs q length " + std::to_string(q_probs.size()));
  for (double q : q_probs)
    if (q <= 0.0) throw ConfigError("kld: q contains a non-positive entry; smooth first");

  double mx = p_logits.data()[0];
  for (double v : p_logits.data()) mx = std::max(mx, v);
  std::vector<double> p(p_logits.size());
  double z = 0.0;
  for (int i = 0; i < p_logits.size(); ++i) {
    p[i] = std::exp(p_logits.data()[i] - mx);
    z += p[i];
  }
  double d = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    p[i] /= z;
    d += p[i] * (std::log(p[i]) - std::log(q_probs[i]));
  }
  auto pa = p_logits.node();
  return finish(make_node({1}, {d}), {pa}, [pa, p, q_probs, d](Node& n) {
    pa->ensure_grad();
    // dD/dl_k = p_k * ((ln p_k - ln q_k) - D)
    for (size_t k = 0; k < p.size(); ++k)
      pa->grad[k] += n.grad[0] * p[k] * ((std::log(p[k]) - std::log(q_probs[k])) - d);
  });
}

Tensor gru_cell(const Tensor& x, const Tensor& h, const GruParams& p) {
  Tensor xh = concat({x, h});
  Tensor z = sigmoid(add(matmul(p.wz, xh), p.bz));
  Tensor r = sigmoid(add(matmul(p.wr, xh), p.br));
  Tensor cand = tanh(add(matmul(p.wc, concat({x, mul(r, h)})), p.bc));
  Tensor ones = Tensor::constant(std::vector<double>(z.size(), 1.0));
  return add(mul(sub(ones, z), h), mul(z, cand));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ConfigError("backward: loss must be a scalar tensor");
  Node* root = loss.node().get();
  if (!root->requires_grad) return;  // nothing trainable upstream

  // iterative post-order topological sort over the grad-requiring subgraph
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backfn) {
      n->ensure_grad();
      n->backfn(*n);
    }
  }
}

void ParamSet::add(const std::string& name, Tensor t) {
  if (by_name_.count(name)) throw ConfigError("ParamSet: duplicate name " + name);
  order_.push_back(name);
  by_name_.emplace(name, std::move(t));
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ConfigError("ParamSet: unknown name " + name);
  return it->second;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ConfigError("ParamSet: unknown name " + name);
  return it->second;
}

void ParamSet::zero_grad() {
  for (const auto& name : order_) by_name_.at(name).zero_grad();
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (const auto& name : order_) {
    const Tensor& t = by_name_.at(name);
    out.add(name, Tensor::param(t.data(), t.shape()));
  }
  return out;
}

void ParamSet::copy_values_from(const ParamSet& src) {
  for (const auto& name : src.order_) at(name).data() = src.at(name).data();
}

void ParamSet::save(const std::string& path) const {
  nlohmann::json j;
  j["format"] = "lecnav-params-v1";
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& name : order_) {
    const Tensor& t = by_name_.at(name);
    tensors[name] = {{"shape", t.shape()}, {"data", t.data()}};
  }
  j["tensors"] = tensors;
  j["order"] = order_;
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write checkpoint: " + path);
  f << j.dump();
}

ParamSet ParamSet::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read checkpoint: " + path);
  nlohmann::json j;
  f >> j;
  if (j.value("format", "") != "lecnav-params-v1")
    throw ConfigError("unrecognized checkpoint format in " + path);
  ParamSet out;
  for (const auto& name : j.at("order").get<std::vector<std::string>>()) {
    const auto& t = j.at("tensors").at(name);
    out.add(name, Tensor::param(t.at("data").get<std::vector<double>>(),
                                t.at("shape").get<std::vector<int>>()));
  }
  return out;
}

void adam_step(ParamSet& params, double lr, double beta1, double beta2, double eps) {
  params.step_count_ += 1;
  const double t = static_cast<double>(params.step_count_);
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (const auto& name : params.order_) {
    Tensor& p = params.by_name_.at(name);
    p.node()->ensure_grad();
    auto& m = params.m_[name];
    auto& v = params.v_[name];
    if (m.size() != p.data().size()) m.assign(p.data().size(), 0.0);
    if (v.size() != p.data().size()) v.assign(p.data().size(), 0.0);
    auto& g = p.node()->grad;
    auto& x = p.data();
    for (size_t i = 0; i < x.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      x[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
  params.zero_grad();
}

}  // namespace lecnav::ad
