#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "lingo/rng.hpp"
#include "lingo/tensor.hpp"

// Reverse-mode autodiff over dense f64 tensors. A Tape records the forward
// graph in construction order (inputs always precede outputs), so backward
// is a single reverse sweep. One tape per episode, one thread per tape.
namespace lingo {

using Var = std::int32_t;

enum class OpKind : std::uint8_t {
  leaf,
  param_leaf,
  matmul,
  tmatvec,
  add,
  sub,
  hadamard,
  mul_vs,
  one_minus,
  scale,
  concat,
  slice,
  stack_rows,
  sigmoid,
  tanh_fn,
  relu,
  softmax,
  embedding_lookup,
  cosine,
  cos_rows,
  cross_entropy,
  max_reduce,
  mean_reduce,
  sum_reduce,
  affine,
  affine2,
  conv2d,
  maxpool2d,
  memory_write,
  stop_gradient,
  reshape,
};

const char* op_name(OpKind k);

// Named trainable tensor plus its gradient accumulator.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  int id = -1;
};

class ParamStore {
 public:
  Param& add(const std::string& name, Tensor init, bool trainable = true);
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t size() const { return items_.size(); }
  Param& operator[](std::size_t i) { return *items_[i]; }
  const Param& operator[](std::size_t i) const { return *items_[i]; }
  void zero_grads();
  std::int64_t total_trainable() const;

 private:
  std::vector<std::unique_ptr<Param>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Per-worker gradient sink: one slot per param id, lazily allocated, summed
// into Param::grad in a fixed order by the trainer.
struct GradBuffer {
  std::vector<Tensor> slots;
  void ensure(const ParamStore& store) { slots.resize(store.size()); }
  void clear();
  void add_to(ParamStore& store) const;
};

class Tape {
 public:
  // leaves
  Var leaf(Tensor value);
  Var constant(double x) { return leaf(Tensor::scalar(x)); }
  Var param(const Param& p);

  // core ops
  Var matmul(Var a, Var b);
  Var tmatvec(Var m, Var x);  // M^T x with M rank-2, x rank-1
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var hadamard(Var a, Var b);
  Var mul_vs(Var v, Var s);  // tensor times scalar var
  Var one_minus(Var x);
  Var scale(Var x, double c);
  Var concat(const std::vector<Var>& xs);
  Var slice(Var x, std::int64_t lo, std::int64_t len);
  Var stack_rows(const std::vector<Var>& rows);
  Var sigmoid(Var x);
  Var tanh(Var x);
  Var relu(Var x);
  Var softmax(Var x);
  Var embedding_lookup(Var table, std::int64_t index);
  Var cosine_similarity(Var u, Var v);
  Var cos_rows(Var m, Var v);  // cosine of v against each row of m
  Var cross_entropy(Var probs, std::int64_t index);  // -log(max(p[i], 1e-12))
  Var max_reduce(Var x);
  Var mean_reduce(Var x);
  Var sum_reduce(Var x);
  Var affine(Var w, Var x, Var b);               // Wx + b
  Var affine2(Var w, Var x, Var u, Var h, Var b);  // Wx + Uh + b
  Var conv2d(Var input, Var weight, Var bias);   // 3x3 same, stride 1, HWC
  Var maxpool2d(Var input, int window, int stride);
  // Erase-then-add write of (1 - g)*row + g*content into slot `slot` of a
  // slot-major memory matrix; differentiable in m, content and gate.
  Var memory_write(Var m, Var content, Var gate, std::int64_t slot);
  Var stop_gradient(Var x);
  Var reshape(Var x, std::vector<std::int64_t> shape);
  Var flatten(Var x);

  const Tensor& val(Var v) const { return nodes_[v].val; }
  const Tensor& grad(Var v) const { return nodes_[v].grad; }
  double scalar_val(Var v) const;

  // Reverse sweep from a scalar loss. Gradients of param leaves stay on the
  // tape until exported; backward may be called once per tape.
  void backward(Var loss);
  void export_grads(GradBuffer& out) const;

  std::size_t num_nodes() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    OpKind op;
    std::array<Var, 5> in{{-1, -1, -1, -1, -1}};
    std::uint8_t n_in = 0;
    Tensor val;
    Tensor grad;
    std::int64_t i0 = 0, i1 = 0, i2 = 0;
    double x0 = 0.0;
    std::vector<std::int32_t> aux;
    const Param* bound = nullptr;
  };

  Var push(Node n);
  Node& at(Var v) { return nodes_[v]; }
  void check_rank(Var v, std::int64_t rank, const char* op) const;
  [[noreturn]] void fail(const char* op, const std::string& detail) const;
  void backward_node(std::int32_t idx, std::vector<bool>& touched);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace lingo
