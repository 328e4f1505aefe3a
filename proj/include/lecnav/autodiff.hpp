#pragma once

// Reverse-mode automatic differentiation over dense double tensors.
// Scope is exactly what the communication nets and the distillation losses
// need: rank-1/rank-2 tensors, a fixed op set, full-episode BPTT, Adam.

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "lecnav/common.hpp"

namespace lecnav::ad {

struct Node {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Accumulates d(loss)/d(parent) into parents' grad given this node's grad.
  std::function<void(Node&)> backfn;

  Node() { ++live_count; }
  ~Node() { --live_count; }
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }

  static std::atomic<long> live_count;
};

// Number of graph nodes currently alive; lets tests assert the graph is freed.
long live_node_count();

// Graph recording is on by default; evaluation passes disable it via the guard.
bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const std::vector<int>& shape);
  static Tensor constant(std::vector<double> data, const std::vector<int>& shape);
  static Tensor constant(std::vector<double> data);  // rank-1
  static Tensor scalar(double v);
  // Trainable leaf: participates in backward() and Adam.
  static Tensor param(std::vector<double> data, const std::vector<int>& shape);

  bool defined() const { return n_ != nullptr; }
  const std::vector<int>& shape() const { return n_->shape; }
  int size() const { return static_cast<int>(n_->value.size()); }
  const std::vector<double>& data() const { return n_->value; }
  std::vector<double>& data() { return n_->value; }
  const std::vector<double>& grad() const;
  bool requires_grad() const { return n_ && n_->requires_grad; }
  void zero_grad();
  double item() const;  // value of a single-element tensor

  std::shared_ptr<Node> node() const { return n_; }
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

 private:
  std::shared_ptr<Node> n_;
};

// Forward ops. Shape mismatches throw ConfigError naming both shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);  // {m,k}x{k,n} or {m,k}x{k}
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softmax(const Tensor& a);  // rank-1
Tensor concat(const std::vector<Tensor>& parts);  // rank-1
Tensor slice(const Tensor& a, int start, int len);  // rank-1
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor square(const Tensor& a);

// Rescales a rank-1 tensor to L2 norm `target_norm` (norm floor 1e-12).
// Used to hold emitted symbol vectors at unit average power.
Tensor scale_to_norm(const Tensor& a, double target_norm);

// D( softmax(p_logits) || q ). q must be strictly positive and sum to 1;
// a zero entry throws (callers smooth the teacher pdf first).
Tensor kld(const Tensor& p_logits, const std::vector<double>& q_probs);

// Gated recurrent cell: update/reset gates plus candidate state. Weight
// matrices are {hidden, in+hidden}; biases {hidden}.
struct GruParams {
  Tensor wz, bz, wr, br, wc, bc;
};
Tensor gru_cell(const Tensor& x, const Tensor& h, const GruParams& p);

// Backpropagate from a scalar loss; accumulates into every reachable
// trainable tensor's grad until zeroed.
void backward(const Tensor& loss);

// Named trainable tensors plus Adam state.
class ParamSet {
 public:
  void add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return by_name_.count(name) > 0; }
  const std::vector<std::string>& names() const { return order_; }
  long step_count() const { return step_count_; }

  void zero_grad();
  // Deep copy of values; fresh grads and optimizer state.
  ParamSet clone() const;
  // Overwrites this set's values with `src` (target-network hard sync).
  void copy_values_from(const ParamSet& src);

  void save(const std::string& path) const;
  static ParamSet load(const std::string& path);

  friend void adam_step(ParamSet& params, double lr, double beta1, double beta2,
                        double eps);

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor> by_name_;
  std::unordered_map<std::string, std::vector<double>> m_, v_;
  long step_count_ = 0;
};

void adam_step(ParamSet& params, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

}  // namespace lecnav::ad
