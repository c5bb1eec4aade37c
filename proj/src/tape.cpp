#include "lingo/tape.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "lingo/kernels.hpp"

namespace lingo {

namespace {
constexpr double kProbFloor = 1e-12;
constexpr double kNormFloor = 1e-30;
}  // namespace

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::param_leaf: return "param_leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::tmatvec: return "tmatvec";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::hadamard: return "hadamard";
    case OpKind::mul_vs: return "mul_vs";
    case OpKind::one_minus: return "one_minus";
    case OpKind::scale: return "scale";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::stack_rows: return "stack_rows";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh_fn: return "tanh";
    case OpKind::relu: return "relu";
    case OpKind::softmax: return "softmax";
    case OpKind::embedding_lookup: return "embedding_lookup";
    case OpKind::cosine: return "cosine_similarity";
    case OpKind::cos_rows: return "cos_rows";
    case OpKind::cross_entropy: return "cross_entropy";
    case OpKind::max_reduce: return "max_reduce";
    case OpKind::mean_reduce: return "mean_reduce";
    case OpKind::sum_reduce: return "sum_reduce";
    case OpKind::affine: return "affine";
    case OpKind::affine2: return "affine2";
    case OpKind::conv2d: return "conv2d";
    case OpKind::maxpool2d: return "maxpool2d";
    case OpKind::memory_write: return "memory_write";
    case OpKind::stop_gradient: return "stop_gradient";
    case OpKind::reshape: return "reshape";
  }
  return "?";
}

// ---------------------------------------------------------------- ParamStore

Param& ParamStore::add(const std::string& name, Tensor init, bool trainable) {
  if (index_.count(name))
    throw std::runtime_error("duplicate parameter name: " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->grad = Tensor(init.shape);
  p->value = std::move(init);
  p->trainable = trainable;
  p->id = static_cast<int>(items_.size());
  index_[name] = items_.size();
  items_.push_back(std::move(p));
  return *items_.back();
}

Param& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::runtime_error("unknown parameter: " + name);
  return *items_[it->second];
}

const Param& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::runtime_error("unknown parameter: " + name);
  return *items_[it->second];
}

void ParamStore::zero_grads() {
  for (auto& p : items_) p->grad.fill(0.0);
}

std::int64_t ParamStore::total_trainable() const {
  std::int64_t n = 0;
  for (auto& p : items_)
    if (p->trainable) n += p->value.numel();
  return n;
}

void GradBuffer::clear() {
  for (auto& t : slots) t.v.clear(), t.shape.clear();
}

void GradBuffer::add_to(ParamStore& store) const {
  const auto& K = kernels::table();
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const Tensor& g = slots[i];
    if (g.v.empty()) continue;
    K.axpy(1.0, g.data(), store[i].grad.data(), g.v.size());
  }
}

// ---------------------------------------------------------------------- Tape

void Tape::fail(const char* op, const std::string& detail) const {
  throw std::runtime_error(std::string(op) + ": " + detail);
}

void Tape::check_rank(Var v, std::int64_t rank, const char* op) const {
  if (nodes_[v].val.rank() != rank)
    fail(op, "expected rank-" + std::to_string(rank) + " input, got shape " +
                 nodes_[v].val.shape_str());
}

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<Var>(nodes_.size() - 1);
}

double Tape::scalar_val(Var v) const {
  if (!nodes_[v].val.is_scalar())
    throw std::runtime_error("scalar_val on non-scalar node");
  return nodes_[v].val.v[0];
}

void Tape::clear() {
  nodes_.clear();
  backward_done_ = false;
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.op = OpKind::leaf;
  n.val = std::move(value);
  return push(std::move(n));
}

Var Tape::param(const Param& p) {
  Node n;
  n.op = OpKind::param_leaf;
  n.val = p.value;
  n.bound = &p;
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& A = nodes_[a].val;
  const Tensor& B = nodes_[b].val;
  if (A.rank() != 2)
    fail("matmul", "lhs must be rank-2, got " + A.shape_str());
  Node n;
  n.op = OpKind::matmul;
  n.in = {a, b};
  n.n_in = 2;
  const auto& K = kernels::table();
  if (B.rank() == 1) {
    if (A.cols() != B.numel())
      fail("matmul", "shape mismatch " + A.shape_str() + " x " + B.shape_str());
    n.val = Tensor({A.rows()});
    K.matvec(A.data(), B.data(), n.val.data(), A.rows(), A.cols());
  } else if (B.rank() == 2) {
    if (A.cols() != B.rows())
      fail("matmul", "shape mismatch " + A.shape_str() + " x " + B.shape_str());
    n.val = Tensor({A.rows(), B.cols()});
    for (std::int64_t i = 0; i < A.rows(); ++i)
      for (std::int64_t l = 0; l < A.cols(); ++l)
        K.axpy(A.at(i, l), B.data() + l * B.cols(),
               n.val.data() + i * B.cols(), B.cols());
  } else {
    fail("matmul", "rhs must be rank-1 or rank-2, got " + B.shape_str());
  }
  return push(std::move(n));
}

Var Tape::tmatvec(Var m, Var x) {
  const Tensor& M = nodes_[m].val;
  const Tensor& X = nodes_[x].val;
  check_rank(m, 2, "tmatvec");
  check_rank(x, 1, "tmatvec");
  if (M.rows() != X.numel())
    fail("tmatvec", "shape mismatch " + M.shape_str() + "^T x " + X.shape_str());
  Node n;
  n.op = OpKind::tmatvec;
  n.in = {m, x};
  n.n_in = 2;
  n.val = Tensor({M.cols()});
  kernels::table().matvec_t(M.data(), X.data(), n.val.data(), M.rows(),
                            M.cols());
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  const Tensor& A = nodes_[a].val;
  const Tensor& B = nodes_[b].val;
  if (!same_shape(A, B))
    fail("add", "shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  Node n;
  n.op = OpKind::add;
  n.in = {a, b};
  n.n_in = 2;
  n.val = Tensor(A.shape);
  kernels::table().add(A.data(), B.data(), n.val.data(), A.v.size());
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  const Tensor& A = nodes_[a].val;
  const Tensor& B = nodes_[b].val;
  if (!same_shape(A, B))
    fail("sub", "shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  Node n;
  n.op = OpKind::sub;
  n.in = {a, b};
  n.n_in = 2;
  n.val = Tensor(A.shape);
  kernels::table().sub(A.data(), B.data(), n.val.data(), A.v.size());
  return push(std::move(n));
}

Var Tape::hadamard(Var a, Var b) {
  const Tensor& A = nodes_[a].val;
  const Tensor& B = nodes_[b].val;
  if (!same_shape(A, B))
    fail("hadamard",
         "shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  Node n;
  n.op = OpKind::hadamard;
  n.in = {a, b};
  n.n_in = 2;
  n.val = Tensor(A.shape);
  kernels::table().mul(A.data(), B.data(), n.val.data(), A.v.size());
  return push(std::move(n));
}

Var Tape::mul_vs(Var v, Var s) {
  if (!nodes_[s].val.is_scalar())
    fail("mul_vs", "second input must be scalar, got " +
                       nodes_[s].val.shape_str());
  const Tensor& V = nodes_[v].val;
  Node n;
  n.op = OpKind::mul_vs;
  n.in = {v, s};
  n.n_in = 2;
  n.val = V;
  kernels::table().scale(nodes_[s].val.v[0], n.val.data(), n.val.v.size());
  return push(std::move(n));
}

Var Tape::one_minus(Var x) {
  Node n;
  n.op = OpKind::one_minus;
  n.in = {x};
  n.n_in = 1;
  n.val = Tensor(nodes_[x].val.shape);
  for (std::size_t i = 0; i < n.val.v.size(); ++i)
    n.val.v[i] = 1.0 - nodes_[x].val.v[i];
  return push(std::move(n));
}

Var Tape::scale(Var x, double c) {
  Node n;
  n.op = OpKind::scale;
  n.in = {x};
  n.n_in = 1;
  n.x0 = c;
  n.val = nodes_[x].val;
  kernels::table().scale(c, n.val.data(), n.val.v.size());
  return push(std::move(n));
}

Var Tape::concat(const std::vector<Var>& xs) {
  if (xs.empty()) fail("concat", "no inputs");
  if (xs.size() > 5) {
    // fold longer lists pairwise through the 5-input node limit
    std::vector<Var> head(xs.begin(), xs.begin() + 5);
    std::vector<Var> rest;
    rest.push_back(concat(head));
    rest.insert(rest.end(), xs.begin() + 5, xs.end());
    return concat(rest);
  }
  Node n;
  n.op = OpKind::concat;
  n.n_in = static_cast<std::uint8_t>(xs.size());
  std::int64_t total = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (nodes_[xs[i]].val.rank() > 1)
      fail("concat", "inputs must be rank-1 or scalar, got " +
                         nodes_[xs[i]].val.shape_str());
    n.in[i] = xs[i];
    total += nodes_[xs[i]].val.numel();
  }
  n.val = Tensor({total});
  std::int64_t off = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor& t = nodes_[xs[i]].val;
    std::memcpy(n.val.data() + off, t.data(), t.v.size() * sizeof(double));
    off += t.numel();
  }
  return push(std::move(n));
}

Var Tape::slice(Var x, std::int64_t lo, std::int64_t len) {
  const Tensor& X = nodes_[x].val;
  check_rank(x, 1, "slice");
  if (lo < 0 || len <= 0 || lo + len > X.numel())
    fail("slice", "range [" + std::to_string(lo) + "," +
                      std::to_string(lo + len) + ") out of " + X.shape_str());
  Node n;
  n.op = OpKind::slice;
  n.in = {x};
  n.n_in = 1;
  n.i0 = lo;
  n.i1 = len;
  n.val = Tensor({len});
  std::memcpy(n.val.data(), X.data() + lo, len * sizeof(double));
  return push(std::move(n));
}

Var Tape::stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) fail("stack_rows", "no inputs");
  if (rows.size() > 5) {
    // assemble via repeated concat into a flat buffer instead
    std::vector<Var> flat = rows;
    std::int64_t d = nodes_[rows[0]].val.numel();
    Var cat = concat(flat);
    // reinterpret as matrix: use a slice-free reshape through a node
    Node n;
    n.op = OpKind::stop_gradient;  // identity carrier with reshaped value
    n.in = {cat};
    n.n_in = 1;
    n.val = Tensor({static_cast<std::int64_t>(rows.size()), d},
                   nodes_[cat].val.v);
    // keep gradient flowing: override op to slice-style passthrough
    n.op = OpKind::stack_rows;
    n.i0 = -1;  // marks reshape-of-concat form
    return push(std::move(n));
  }
  Node n;
  n.op = OpKind::stack_rows;
  n.n_in = static_cast<std::uint8_t>(rows.size());
  std::int64_t d = nodes_[rows[0]].val.numel();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    check_rank(rows[i], 1, "stack_rows");
    if (nodes_[rows[i]].val.numel() != d)
      fail("stack_rows", "row length mismatch");
    n.in[i] = rows[i];
  }
  n.val = Tensor({static_cast<std::int64_t>(rows.size()), d});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::memcpy(n.val.data() + static_cast<std::int64_t>(i) * d,
                nodes_[rows[i]].val.data(), d * sizeof(double));
  return push(std::move(n));
}

Var Tape::sigmoid(Var x) {
  Node n;
  n.op = OpKind::sigmoid;
  n.in = {x};
  n.n_in = 1;
  n.val = Tensor(nodes_[x].val.shape);
  for (std::size_t i = 0; i < n.val.v.size(); ++i)
    n.val.v[i] = 1.0 / (1.0 + std::exp(-nodes_[x].val.v[i]));
  return push(std::move(n));
}

Var Tape::tanh(Var x) {
  Node n;
  n.op = OpKind::tanh_fn;
  n.in = {x};
  n.n_in = 1;
  n.val = Tensor(nodes_[x].val.shape);
  for (std::size_t i = 0; i < n.val.v.size(); ++i)
    n.val.v[i] = std::tanh(nodes_[x].val.v[i]);
  return push(std::move(n));
}

Var Tape::relu(Var x) {
  Node n;
  n.op = OpKind::relu;
  n.in = {x};
  n.n_in = 1;
  n.val = Tensor(nodes_[x].val.shape);
  for (std::size_t i = 0; i < n.val.v.size(); ++i)
    n.val.v[i] = nodes_[x].val.v[i] > 0.0 ? nodes_[x].val.v[i] : 0.0;
  return push(std::move(n));
}

Var Tape::softmax(Var x) {
  check_rank(x, 1, "softmax");
  Node n;
  n.op = OpKind::softmax;
  n.in = {x};
  n.n_in = 1;
  const Tensor& X = nodes_[x].val;
  n.val = Tensor(X.shape);
  double m = kernels::table().max_val(X.data(), X.v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < X.v.size(); ++i) {
    n.val.v[i] = std::exp(X.v[i] - m);
    z += n.val.v[i];
  }
  kernels::table().scale(1.0 / z, n.val.data(), n.val.v.size());
  return push(std::move(n));
}

Var Tape::embedding_lookup(Var table, std::int64_t index) {
  const Tensor& T = nodes_[table].val;
  check_rank(table, 2, "embedding_lookup");
  if (index < 0 || index >= T.rows())
    fail("embedding_lookup", "index " + std::to_string(index) + " out of " +
                                 T.shape_str());
  Node n;
  n.op = OpKind::embedding_lookup;
  n.in = {table};
  n.n_in = 1;
  n.i0 = index;
  n.val = Tensor({T.cols()});
  std::memcpy(n.val.data(), T.data() + index * T.cols(),
              T.cols() * sizeof(double));
  return push(std::move(n));
}

Var Tape::cosine_similarity(Var u, Var v) {
  const Tensor& U = nodes_[u].val;
  const Tensor& V = nodes_[v].val;
  check_rank(u, 1, "cosine_similarity");
  check_rank(v, 1, "cosine_similarity");
  if (U.numel() != V.numel())
    fail("cosine_similarity",
         "shape mismatch " + U.shape_str() + " vs " + V.shape_str());
  const auto& K = kernels::table();
  double nu = std::sqrt(K.dot(U.data(), U.data(), U.v.size()));
  double nv = std::sqrt(K.dot(V.data(), V.data(), V.v.size()));
  double denom = nu * nv;
  Node n;
  n.op = OpKind::cosine;
  n.in = {u, v};
  n.n_in = 2;
  n.val = Tensor::scalar(
      denom > kNormFloor ? K.dot(U.data(), V.data(), U.v.size()) / denom
                         : 0.0);
  return push(std::move(n));
}

Var Tape::cos_rows(Var m, Var v) {
  const Tensor& M = nodes_[m].val;
  const Tensor& V = nodes_[v].val;
  check_rank(m, 2, "cos_rows");
  check_rank(v, 1, "cos_rows");
  if (M.cols() != V.numel())
    fail("cos_rows", "shape mismatch " + M.shape_str() + " vs " + V.shape_str());
  const auto& K = kernels::table();
  Node n;
  n.op = OpKind::cos_rows;
  n.in = {m, v};
  n.n_in = 2;
  n.val = Tensor({M.rows()});
  double nv = std::sqrt(K.dot(V.data(), V.data(), V.v.size()));
  for (std::int64_t r = 0; r < M.rows(); ++r) {
    const double* row = M.data() + r * M.cols();
    double nr = std::sqrt(K.dot(row, row, M.cols()));
    double denom = nr * nv;
    n.val.v[r] =
        denom > kNormFloor ? K.dot(row, V.data(), M.cols()) / denom : 0.0;
  }
  return push(std::move(n));
}

Var Tape::cross_entropy(Var probs, std::int64_t index) {
  const Tensor& P = nodes_[probs].val;
  check_rank(probs, 1, "cross_entropy");
  if (index < 0 || index >= P.numel())
    fail("cross_entropy",
         "index " + std::to_string(index) + " out of " + P.shape_str());
  Node n;
  n.op = OpKind::cross_entropy;
  n.in = {probs};
  n.n_in = 1;
  n.i0 = index;
  double p = P.v[index] > kProbFloor ? P.v[index] : kProbFloor;
  n.val = Tensor::scalar(-std::log(p));
  return push(std::move(n));
}

Var Tape::max_reduce(Var x) {
  const Tensor& X = nodes_[x].val;
  if (X.v.empty()) fail("max_reduce", "empty input");
  Node n;
  n.op = OpKind::max_reduce;
  n.in = {x};
  n.n_in = 1;
  std::int64_t arg = 0;
  for (std::size_t i = 1; i < X.v.size(); ++i)
    if (X.v[i] > X.v[arg]) arg = static_cast<std::int64_t>(i);
  n.i0 = arg;
  n.val = Tensor::scalar(X.v[arg]);
  return push(std::move(n));
}

Var Tape::mean_reduce(Var x) {
  const Tensor& X = nodes_[x].val;
  Node n;
  n.op = OpKind::mean_reduce;
  n.in = {x};
  n.n_in = 1;
  n.val = Tensor::scalar(kernels::table().sum(X.data(), X.v.size()) /
                         static_cast<double>(X.v.size()));
  return push(std::move(n));
}

Var Tape::sum_reduce(Var x) {
  const Tensor& X = nodes_[x].val;
  Node n;
  n.op = OpKind::sum_reduce;
  n.in = {x};
  n.n_in = 1;
  n.val = Tensor::scalar(kernels::table().sum(X.data(), X.v.size()));
  return push(std::move(n));
}

Var Tape::affine(Var w, Var x, Var b) {
  const Tensor& W = nodes_[w].val;
  const Tensor& X = nodes_[x].val;
  const Tensor& B = nodes_[b].val;
  check_rank(w, 2, "affine");
  check_rank(x, 1, "affine");
  if (W.cols() != X.numel() || W.rows() != B.numel())
    fail("affine", "shape mismatch " + W.shape_str() + " x " + X.shape_str() +
                       " + " + B.shape_str());
  Node n;
  n.op = OpKind::affine;
  n.in = {w, x, b};
  n.n_in = 3;
  n.val = B;
  const auto& K = kernels::table();
  Tensor tmp({W.rows()});
  K.matvec(W.data(), X.data(), tmp.data(), W.rows(), W.cols());
  K.axpy(1.0, tmp.data(), n.val.data(), tmp.v.size());
  return push(std::move(n));
}

Var Tape::affine2(Var w, Var x, Var u, Var h, Var b) {
  const Tensor& W = nodes_[w].val;
  const Tensor& X = nodes_[x].val;
  const Tensor& U = nodes_[u].val;
  const Tensor& H = nodes_[h].val;
  const Tensor& B = nodes_[b].val;
  if (W.rank() != 2 || U.rank() != 2 || W.cols() != X.numel() ||
      U.cols() != H.numel() || W.rows() != U.rows() || W.rows() != B.numel())
    fail("affine2", "shape mismatch " + W.shape_str() + " x " + X.shape_str() +
                        " + " + U.shape_str() + " x " + H.shape_str() + " + " +
                        B.shape_str());
  Node n;
  n.op = OpKind::affine2;
  n.in = {w, x, u, h, b};
  n.n_in = 5;
  n.val = B;
  const auto& K = kernels::table();
  Tensor tmp({W.rows()});
  K.matvec(W.data(), X.data(), tmp.data(), W.rows(), W.cols());
  K.axpy(1.0, tmp.data(), n.val.data(), tmp.v.size());
  K.matvec(U.data(), H.data(), tmp.data(), U.rows(), U.cols());
  K.axpy(1.0, tmp.data(), n.val.data(), tmp.v.size());
  return push(std::move(n));
}

Var Tape::conv2d(Var input, Var weight, Var bias) {
  const Tensor& X = nodes_[input].val;
  const Tensor& W = nodes_[weight].val;
  const Tensor& B = nodes_[bias].val;
  if (X.rank() != 3 || W.rank() != 4)
    fail("conv2d", "expected HWC input and OHWC weight, got " +
                       X.shape_str() + " and " + W.shape_str());
  const std::int64_t h = X.shape[0], w = X.shape[1], cin = X.shape[2];
  const std::int64_t cout = W.shape[0], kh = W.shape[1], kw = W.shape[2];
  if (W.shape[3] != cin || B.numel() != cout || kh % 2 == 0 || kw % 2 == 0)
    fail("conv2d", "shape mismatch " + X.shape_str() + " conv " +
                       W.shape_str() + " + " + B.shape_str());
  Node n;
  n.op = OpKind::conv2d;
  n.in = {input, weight, bias};
  n.n_in = 3;
  n.val = Tensor({h, w, cout});
  const std::int64_t ph = kh / 2, pw = kw / 2;
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t co = 0; co < cout; ++co) {
        double acc = B.v[co];
        for (std::int64_t dy = 0; dy < kh; ++dy) {
          const std::int64_t yy = y + dy - ph;
          if (yy < 0 || yy >= h) continue;
          for (std::int64_t dx = 0; dx < kw; ++dx) {
            const std::int64_t xx = x + dx - pw;
            if (xx < 0 || xx >= w) continue;
            const double* px = X.data() + (yy * w + xx) * cin;
            const double* wt = W.data() + ((co * kh + dy) * kw + dx) * cin;
            for (std::int64_t c = 0; c < cin; ++c) acc += px[c] * wt[c];
          }
        }
        n.val.v[(y * w + x) * cout + co] = acc;
      }
  return push(std::move(n));
}

Var Tape::maxpool2d(Var input, int window, int stride) {
  const Tensor& X = nodes_[input].val;
  check_rank(input, 3, "maxpool2d");
  const std::int64_t h = X.shape[0], w = X.shape[1], c = X.shape[2];
  if (h < window || w < window)
    fail("maxpool2d", "input " + X.shape_str() + " smaller than window " +
                          std::to_string(window));
  const std::int64_t ho = (h - window) / stride + 1;
  const std::int64_t wo = (w - window) / stride + 1;
  Node n;
  n.op = OpKind::maxpool2d;
  n.in = {input};
  n.n_in = 1;
  n.val = Tensor({ho, wo, c});
  n.aux.resize(static_cast<std::size_t>(ho * wo * c));
  for (std::int64_t y = 0; y < ho; ++y)
    for (std::int64_t x = 0; x < wo; ++x)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double best = -1e300;
        std::int64_t arg = 0;
        for (std::int64_t dy = 0; dy < window; ++dy)
          for (std::int64_t dx = 0; dx < window; ++dx) {
            const std::int64_t idx =
                ((y * stride + dy) * w + (x * stride + dx)) * c + ch;
            if (X.v[idx] > best) best = X.v[idx], arg = idx;
          }
        const std::int64_t o = (y * wo + x) * c + ch;
        n.val.v[o] = best;
        n.aux[o] = static_cast<std::int32_t>(arg);
      }
  return push(std::move(n));
}

Var Tape::memory_write(Var m, Var content, Var gate, std::int64_t slot) {
  const Tensor& M = nodes_[m].val;
  const Tensor& C = nodes_[content].val;
  check_rank(m, 2, "memory_write");
  check_rank(content, 1, "memory_write");
  if (!nodes_[gate].val.is_scalar())
    fail("memory_write", "gate must be scalar");
  if (M.cols() != C.numel() || slot < 0 || slot >= M.rows())
    fail("memory_write", "slot " + std::to_string(slot) + ", content " +
                             C.shape_str() + " vs memory " + M.shape_str());
  const double g = nodes_[gate].val.v[0];
  Node n;
  n.op = OpKind::memory_write;
  n.in = {m, content, gate};
  n.n_in = 3;
  n.i0 = slot;
  n.val = M;
  double* row = n.val.data() + slot * M.cols();
  const double* crow = C.data();
  for (std::int64_t i = 0; i < M.cols(); ++i)
    row[i] = row[i] * (1.0 - g) + g * crow[i];
  return push(std::move(n));
}

Var Tape::stop_gradient(Var x) {
  Node n;
  n.op = OpKind::stop_gradient;
  n.in = {x};
  n.n_in = 1;
  n.i0 = 0;
  n.val = nodes_[x].val;
  return push(std::move(n));
}

Var Tape::reshape(Var x, std::vector<std::int64_t> shape) {
  if (Tensor::numel_of(shape) != nodes_[x].val.numel())
    fail("reshape", "cannot view " + nodes_[x].val.shape_str() + " as " +
                        Tensor(shape).shape_str());
  Node n;
  n.op = OpKind::reshape;
  n.in = {x};
  n.n_in = 1;
  n.val = Tensor(std::move(shape), nodes_[x].val.v);
  return push(std::move(n));
}

Var Tape::flatten(Var x) { return reshape(x, {nodes_[x].val.numel()}); }

// ------------------------------------------------------------------ backward

namespace {
inline Tensor& ensure_grad(Tensor& g, const Tensor& like,
                           std::vector<bool>& touched, std::int32_t idx) {
  if (!touched[idx]) {
    if (!same_shape(g, like)) g = Tensor(like.shape);
    else g.fill(0.0);
    touched[idx] = true;
  }
  return g;
}
}  // namespace

void Tape::backward(Var loss) {
  if (backward_done_)
    throw std::runtime_error("backward called twice on one tape");
  if (!nodes_[loss].val.is_scalar())
    throw std::runtime_error("backward requires a scalar loss, got " +
                             nodes_[loss].val.shape_str());
  backward_done_ = true;
  std::vector<bool> touched(nodes_.size(), false);
  Node& ln = nodes_[loss];
  ln.grad = Tensor::scalar(1.0);
  touched[loss] = true;
  for (std::int32_t i = loss; i >= 0; --i) {
    if (!touched[i]) continue;
    backward_node(i, touched);
  }
}

void Tape::backward_node(std::int32_t idx, std::vector<bool>& touched) {
  Node& n = nodes_[idx];
  const Tensor& gout = n.grad;
  const auto& K = kernels::table();
  auto gin = [&](int k) -> Tensor& {
    Node& src = nodes_[n.in[k]];
    return ensure_grad(src.grad, src.val, touched, n.in[k]);
  };
  auto inval = [&](int k) -> const Tensor& { return nodes_[n.in[k]].val; };

  switch (n.op) {
    case OpKind::leaf:
    case OpKind::param_leaf:
      break;
    case OpKind::matmul: {
      const Tensor& A = inval(0);
      const Tensor& B = inval(1);
      Tensor& ga = gin(0);
      Tensor& gb = gin(1);
      if (B.rank() == 1) {
        K.ger(1.0, gout.data(), B.data(), ga.data(), A.rows(), A.cols());
        Tensor tmp({A.cols()});
        K.matvec_t(A.data(), gout.data(), tmp.data(), A.rows(), A.cols());
        K.axpy(1.0, tmp.data(), gb.data(), tmp.v.size());
      } else {
        const std::int64_t m = A.rows(), k = A.cols(), c = B.cols();
        for (std::int64_t i = 0; i < m; ++i) {
          for (std::int64_t l = 0; l < k; ++l)
            ga.v[i * k + l] +=
                K.dot(gout.data() + i * c, B.data() + l * c, c);
          K.ger(1.0, A.data() + i * k, gout.data() + i * c, gb.data(), k, c);
        }
      }
      break;
    }
    case OpKind::tmatvec: {
      const Tensor& M = inval(0);
      const Tensor& X = inval(1);
      Tensor& gm = gin(0);
      Tensor& gx = gin(1);
      K.ger(1.0, X.data(), gout.data(), gm.data(), M.rows(), M.cols());
      Tensor tmp({M.rows()});
      K.matvec(M.data(), gout.data(), tmp.data(), M.rows(), M.cols());
      K.axpy(1.0, tmp.data(), gx.data(), tmp.v.size());
      break;
    }
    case OpKind::add:
      K.axpy(1.0, gout.data(), gin(0).data(), gout.v.size());
      K.axpy(1.0, gout.data(), gin(1).data(), gout.v.size());
      break;
    case OpKind::sub:
      K.axpy(1.0, gout.data(), gin(0).data(), gout.v.size());
      K.axpy(-1.0, gout.data(), gin(1).data(), gout.v.size());
      break;
    case OpKind::hadamard: {
      const Tensor& A = inval(0);
      const Tensor& B = inval(1);
      Tensor& ga = gin(0);
      Tensor& gb = gin(1);
      for (std::size_t i = 0; i < gout.v.size(); ++i) {
        ga.v[i] += B.v[i] * gout.v[i];
        gb.v[i] += A.v[i] * gout.v[i];
      }
      break;
    }
    case OpKind::mul_vs: {
      const double s = inval(1).v[0];
      K.axpy(s, gout.data(), gin(0).data(), gout.v.size());
      gin(1).v[0] += K.dot(inval(0).data(), gout.data(), gout.v.size());
      break;
    }
    case OpKind::one_minus:
      K.axpy(-1.0, gout.data(), gin(0).data(), gout.v.size());
      break;
    case OpKind::scale:
      K.axpy(n.x0, gout.data(), gin(0).data(), gout.v.size());
      break;
    case OpKind::concat: {
      std::int64_t off = 0;
      for (int k = 0; k < n.n_in; ++k) {
        Tensor& g = gin(k);
        K.axpy(1.0, gout.data() + off, g.data(), g.v.size());
        off += static_cast<std::int64_t>(g.v.size());
      }
      break;
    }
    case OpKind::slice:
      K.axpy(1.0, gout.data(), gin(0).data() + n.i0, gout.v.size());
      break;
    case OpKind::stack_rows: {
      if (n.i0 == -1) {  // reshape-of-concat form
        K.axpy(1.0, gout.data(), gin(0).data(), gout.v.size());
        break;
      }
      const std::int64_t d = n.val.cols();
      for (int k = 0; k < n.n_in; ++k)
        K.axpy(1.0, gout.data() + k * d, gin(k).data(), d);
      break;
    }
    case OpKind::sigmoid: {
      Tensor& g = gin(0);
      for (std::size_t i = 0; i < gout.v.size(); ++i) {
        const double s = n.val.v[i];
        g.v[i] += s * (1.0 - s) * gout.v[i];
      }
      break;
    }
    case OpKind::tanh_fn: {
      Tensor& g = gin(0);
      for (std::size_t i = 0; i < gout.v.size(); ++i)
        g.v[i] += (1.0 - n.val.v[i] * n.val.v[i]) * gout.v[i];
      break;
    }
    case OpKind::relu: {
      const Tensor& X = inval(0);
      Tensor& g = gin(0);
      for (std::size_t i = 0; i < gout.v.size(); ++i)
        if (X.v[i] > 0.0) g.v[i] += gout.v[i];
      break;
    }
    case OpKind::softmax: {
      const Tensor& P = n.val;
      Tensor& g = gin(0);
      const double dotpg = K.dot(P.data(), gout.data(), P.v.size());
      for (std::size_t i = 0; i < gout.v.size(); ++i)
        g.v[i] += P.v[i] * (gout.v[i] - dotpg);
      break;
    }
    case OpKind::embedding_lookup: {
      Tensor& g = gin(0);
      const std::int64_t cols = inval(0).cols();
      K.axpy(1.0, gout.data(), g.data() + n.i0 * cols, cols);
      break;
    }
    case OpKind::cosine: {
      const Tensor& U = inval(0);
      const Tensor& V = inval(1);
      const double nu = std::sqrt(K.dot(U.data(), U.data(), U.v.size()));
      const double nv = std::sqrt(K.dot(V.data(), V.data(), V.v.size()));
      if (nu * nv <= kNormFloor) break;  // flat at the zero-norm fallback
      const double c = n.val.v[0];
      const double go = gout.v[0];
      Tensor& gu = gin(0);
      Tensor& gv = gin(1);
      for (std::size_t i = 0; i < U.v.size(); ++i) {
        gu.v[i] += go * (V.v[i] / (nu * nv) - c * U.v[i] / (nu * nu));
        gv.v[i] += go * (U.v[i] / (nu * nv) - c * V.v[i] / (nv * nv));
      }
      break;
    }
    case OpKind::cos_rows: {
      const Tensor& M = inval(0);
      const Tensor& V = inval(1);
      const double nv = std::sqrt(K.dot(V.data(), V.data(), V.v.size()));
      Tensor& gm = gin(0);
      Tensor& gv = gin(1);
      for (std::int64_t r = 0; r < M.rows(); ++r) {
        const double go = gout.v[r];
        if (go == 0.0) continue;
        const double* row = M.data() + r * M.cols();
        const double nr = std::sqrt(K.dot(row, row, M.cols()));
        if (nr * nv <= kNormFloor) continue;
        const double c = n.val.v[r];
        double* grow = gm.data() + r * M.cols();
        for (std::int64_t i = 0; i < M.cols(); ++i) {
          grow[i] += go * (V.v[i] / (nr * nv) - c * row[i] / (nr * nr));
          gv.v[i] += go * (row[i] / (nr * nv) - c * V.v[i] / (nv * nv));
        }
      }
      break;
    }
    case OpKind::cross_entropy: {
      const Tensor& P = inval(0);
      if (P.v[n.i0] > kProbFloor)
        gin(0).v[n.i0] += -gout.v[0] / P.v[n.i0];
      break;
    }
    case OpKind::max_reduce:
      gin(0).v[n.i0] += gout.v[0];
      break;
    case OpKind::mean_reduce: {
      Tensor& g = gin(0);
      const double s = gout.v[0] / static_cast<double>(g.v.size());
      for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += s;
      break;
    }
    case OpKind::sum_reduce: {
      Tensor& g = gin(0);
      for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += gout.v[0];
      break;
    }
    case OpKind::affine: {
      const Tensor& W = inval(0);
      const Tensor& X = inval(1);
      K.ger(1.0, gout.data(), X.data(), gin(0).data(), W.rows(), W.cols());
      Tensor tmp({W.cols()});
      K.matvec_t(W.data(), gout.data(), tmp.data(), W.rows(), W.cols());
      K.axpy(1.0, tmp.data(), gin(1).data(), tmp.v.size());
      K.axpy(1.0, gout.data(), gin(2).data(), gout.v.size());
      break;
    }
    case OpKind::affine2: {
      const Tensor& W = inval(0);
      const Tensor& X = inval(1);
      const Tensor& U = inval(2);
      const Tensor& H = inval(3);
      K.ger(1.0, gout.data(), X.data(), gin(0).data(), W.rows(), W.cols());
      Tensor tmp({W.cols()});
      K.matvec_t(W.data(), gout.data(), tmp.data(), W.rows(), W.cols());
      K.axpy(1.0, tmp.data(), gin(1).data(), tmp.v.size());
      K.ger(1.0, gout.data(), H.data(), gin(2).data(), U.rows(), U.cols());
      Tensor tmp2({U.cols()});
      K.matvec_t(U.data(), gout.data(), tmp2.data(), U.rows(), U.cols());
      K.axpy(1.0, tmp2.data(), gin(3).data(), tmp2.v.size());
      K.axpy(1.0, gout.data(), gin(4).data(), gout.v.size());
      break;
    }
    case OpKind::conv2d: {
      const Tensor& X = inval(0);
      const Tensor& W = inval(1);
      Tensor& gx = gin(0);
      Tensor& gw = gin(1);
      Tensor& gb = gin(2);
      const std::int64_t h = X.shape[0], w = X.shape[1], cin = X.shape[2];
      const std::int64_t cout = W.shape[0], kh = W.shape[1], kw = W.shape[2];
      const std::int64_t ph = kh / 2, pw = kw / 2;
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
          for (std::int64_t co = 0; co < cout; ++co) {
            const double go = gout.v[(y * w + x) * cout + co];
            if (go == 0.0) continue;
            gb.v[co] += go;
            for (std::int64_t dy = 0; dy < kh; ++dy) {
              const std::int64_t yy = y + dy - ph;
              if (yy < 0 || yy >= h) continue;
              for (std::int64_t dx = 0; dx < kw; ++dx) {
                const std::int64_t xx = x + dx - pw;
                if (xx < 0 || xx >= w) continue;
                const double* px = X.data() + (yy * w + xx) * cin;
                const double* wt =
                    W.data() + ((co * kh + dy) * kw + dx) * cin;
                double* gpx = gx.data() + (yy * w + xx) * cin;
                double* gwt = gw.data() + ((co * kh + dy) * kw + dx) * cin;
                for (std::int64_t c = 0; c < cin; ++c) {
                  gpx[c] += go * wt[c];
                  gwt[c] += go * px[c];
                }
              }
            }
          }
      break;
    }
    case OpKind::maxpool2d: {
      Tensor& g = gin(0);
      for (std::size_t o = 0; o < n.aux.size(); ++o)
        g.v[n.aux[o]] += gout.v[o];
      break;
    }
    case OpKind::memory_write: {
      const Tensor& M = inval(0);
      const Tensor& C = inval(1);
      const double g = inval(2).v[0];
      Tensor& gm = gin(0);
      Tensor& gc = gin(1);
      Tensor& gg = gin(2);
      const std::int64_t cols = M.cols();
      const double* gout_row = gout.data() + n.i0 * cols;
      // untouched rows pass gradient through unchanged
      for (std::int64_t r = 0; r < M.rows(); ++r) {
        if (r == n.i0) continue;
        K.axpy(1.0, gout.data() + r * cols, gm.data() + r * cols, cols);
      }
      K.axpy(1.0 - g, gout_row, gm.data() + n.i0 * cols, cols);
      K.axpy(g, gout_row, gc.data(), cols);
      double dg = 0.0;
      const double* mrow = M.data() + n.i0 * cols;
      for (std::int64_t i = 0; i < cols; ++i)
        dg += gout_row[i] * (C.v[i] - mrow[i]);
      gg.v[0] += dg;
      break;
    }
    case OpKind::stop_gradient:
      break;
    case OpKind::reshape:
      K.axpy(1.0, gout.data(), gin(0).data(), gout.v.size());
      break;
  }
}

void Tape::export_grads(GradBuffer& out) const {
  const auto& K = kernels::table();
  for (const Node& n : nodes_) {
    if (n.op != OpKind::param_leaf || !n.bound || !n.bound->trainable)
      continue;
    if (!same_shape(n.grad, n.val)) continue;  // never touched by backward
    Tensor& slot = out.slots[static_cast<std::size_t>(n.bound->id)];
    if (slot.v.empty()) slot = Tensor(n.val.shape);
    K.axpy(1.0, n.grad.data(), slot.data(), n.grad.v.size());
  }
}

}  // namespace lingo
