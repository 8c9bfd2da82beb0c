#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "tagat/errors.hpp"
#include "tagat/matrix.hpp"

namespace tagat {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

template <typename T>
class Tape;

/// Persistent value carrier for learnable parameters and fixed data.
/// A tensor may be leased onto at most one live tape at a time; backward
/// writes its gradient back into `grad`.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;
  bool requires_grad = false;

  Tensor() = default;
  Tensor(Shape s, bool req_grad = false)
      : shape(std::move(s)), values(numel(shape), T{0}), requires_grad(req_grad) {}
  Tensor(Shape s, std::vector<T> vals, bool req_grad = false)
      : shape(std::move(s)), values(std::move(vals)), requires_grad(req_grad) {
    if (values.size() != numel(shape))
      throw ShapeMismatch("tensor: " + std::to_string(values.size()) +
                          " values for shape " + shape_str(shape));
  }

  std::size_t size() const { return values.size(); }

 private:
  friend class Tape<T>;
  const Tape<T>* tape_ = nullptr;  // lease owner
  int tape_id_ = -1;               // node handle on the owning tape
};

/// Reverse-mode autodiff over a dynamically built operation tape.
/// Nodes are evaluated eagerly on insertion (define-by-run); insertion order
/// is the topological order, and backward visits nodes exactly once in
/// reverse insertion order. All evaluation is single-threaded and
/// deterministic.
template <typename T>
class Tape {
 public:
  using Id = int;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape() { release_leases(); }

  // -- node construction ----------------------------------------------------

  /// Lease a tensor onto this tape as a leaf. Repeated leases of the same
  /// tensor return the same node, so gradients accumulate across reuse.
  Id param(Tensor<T>& t) {
    if (t.tape_ == this) return t.tape_id_;
    if (t.tape_ != nullptr)
      throw Error("tensor already participates in another tape");
    Node n;
    n.op = Op::kLeaf;
    n.shape = t.shape;
    n.values = t.values;
    n.param = &t;
    const Id id = push(std::move(n));
    t.tape_ = this;
    t.tape_id_ = id;
    leased_.push_back(&t);
    return id;
  }

  Id constant(Shape shape, std::vector<T> values) {
    if (values.size() != numel(shape))
      throw ShapeMismatch("constant: " + std::to_string(values.size()) +
                          " values for shape " + shape_str(shape));
    Node n;
    n.op = Op::kConst;
    n.shape = std::move(shape);
    n.values = std::move(values);
    return push(std::move(n));
  }

  Id constant_scalar(T v) { return constant({1}, {v}); }

  Id constant_matrix(const Matrix<T>& m) {
    return constant({m.rows(), m.cols()}, m.data());
  }

  // -- arithmetic -----------------------------------------------------------

  Id matmul(Id a, Id b) {
    const Node &na = at(a), &nb = at(b);
    require_rank(na, 2, "matmul lhs");
    require_rank(nb, 2, "matmul rhs");
    if (na.shape[1] != nb.shape[0])
      throw ShapeMismatch("matmul: " + shape_str(na.shape) + " vs " + shape_str(nb.shape));
    const std::size_t m = na.shape[0], k = na.shape[1], n = nb.shape[1];
    Node out;
    out.op = Op::kMatMul;
    out.a = a;
    out.b = b;
    out.shape = {m, n};
    out.values.assign(m * n, T{0});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t l = 0; l < k; ++l) {
        const T av = na.values[i * k + l];
        if (av == T{0}) continue;
        const T* brow = &nb.values[l * n];
        T* crow = &out.values[i * n];
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    return push(std::move(out));
  }

  Id transpose(Id a) {
    const Node& na = at(a);
    require_rank(na, 2, "transpose");
    const std::size_t m = na.shape[0], n = na.shape[1];
    Node out;
    out.op = Op::kTranspose;
    out.a = a;
    out.shape = {n, m};
    out.values.resize(m * n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out.values[j * m + i] = na.values[i * n + j];
    return push(std::move(out));
  }

  Id add(Id a, Id b) { return binary(Op::kAdd, a, b); }
  Id sub(Id a, Id b) { return binary(Op::kSub, a, b); }
  Id mul(Id a, Id b) { return binary(Op::kMul, a, b); }

  /// A (m x n) + row vector v (n), broadcast over rows.
  Id add_rowvec(Id a, Id v) {
    const Node &na = at(a), &nv = at(v);
    require_rank(na, 2, "add_rowvec lhs");
    if (nv.shape.size() != 1 || nv.shape[0] != na.shape[1])
      throw ShapeMismatch("add_rowvec: " + shape_str(na.shape) + " vs " + shape_str(nv.shape));
    Node out;
    out.op = Op::kAddRowVec;
    out.a = a;
    out.b = v;
    out.shape = na.shape;
    out.values = na.values;
    const std::size_t m = na.shape[0], n = na.shape[1];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out.values[i * n + j] += nv.values[j];
    return push(std::move(out));
  }

  /// Scale row i of A (m x n) by v[i].
  Id mul_colvec(Id a, Id v) {
    const Node &na = at(a), &nv = at(v);
    require_rank(na, 2, "mul_colvec lhs");
    if (nv.shape.size() != 1 || nv.shape[0] != na.shape[0])
      throw ShapeMismatch("mul_colvec: " + shape_str(na.shape) + " vs " + shape_str(nv.shape));
    Node out;
    out.op = Op::kMulColVec;
    out.a = a;
    out.b = v;
    out.shape = na.shape;
    out.values = na.values;
    const std::size_t m = na.shape[0], n = na.shape[1];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out.values[i * n + j] *= nv.values[i];
    return push(std::move(out));
  }

  /// Multiply every entry of a by a scalar node s (shape {1}).
  Id scale_by_scalar(Id a, Id s) {
    const Node &na = at(a), &ns = at(s);
    if (numel(ns.shape) != 1)
      throw ShapeMismatch("scale_by_scalar: scalar operand has shape " + shape_str(ns.shape));
    Node out;
    out.op = Op::kScaleByScalar;
    out.a = a;
    out.b = s;
    out.shape = na.shape;
    out.values = na.values;
    for (T& v : out.values) v *= ns.values[0];
    return push(std::move(out));
  }

  Id scale(Id a, T c) {
    Node out = unary_clone(Op::kScale, a);
    out.c0 = static_cast<double>(c);
    for (T& v : out.values) v *= c;
    return push(std::move(out));
  }

  Id add_const(Id a, T c) {
    Node out = unary_clone(Op::kAddConst, a);
    for (T& v : out.values) v += c;
    return push(std::move(out));
  }

  Id pow_const(Id a, double p) {
    Node out = unary_clone(Op::kPowConst, a);
    out.c0 = p;
    for (T& v : out.values) v = static_cast<T>(std::pow(static_cast<double>(v), p));
    return push(std::move(out));
  }

  Id clamp(Id a, T lo, T hi) {
    Node out = unary_clone(Op::kClamp, a);
    out.c0 = static_cast<double>(lo);
    out.c1 = static_cast<double>(hi);
    for (T& v : out.values) v = std::clamp(v, lo, hi);
    return push(std::move(out));
  }

  Id log(Id a) {
    Node out = unary_clone(Op::kLog, a);
    for (T& v : out.values) v = std::log(v);
    return push(std::move(out));
  }

  Id silu(Id a) {
    Node out = unary_clone(Op::kSilu, a);
    for (T& v : out.values) v = tagat::silu(v);
    return push(std::move(out));
  }

  Id leaky_relu(Id a, T slope) {
    Node out = unary_clone(Op::kLeakyRelu, a);
    out.c0 = static_cast<double>(slope);
    for (T& v : out.values) v = tagat::leaky_relu(v, slope);
    return push(std::move(out));
  }

  Id sigmoid(Id a) {
    Node out = unary_clone(Op::kSigmoid, a);
    for (T& v : out.values) v = tagat::sigmoid(v);
    return push(std::move(out));
  }

  // -- softmax --------------------------------------------------------------

  Id softmax_rows(Id a) {
    const Node& na = at(a);
    require_rank(na, 2, "softmax_rows");
    Node out;
    out.op = Op::kSoftmaxRows;
    out.a = a;
    out.shape = na.shape;
    out.values.resize(na.values.size());
    const std::size_t m = na.shape[0], n = na.shape[1];
    for (std::size_t i = 0; i < m; ++i) {
      std::span<const T> row(&na.values[i * n], n);
      const std::vector<T> sm = tagat::softmax(row);
      std::copy(sm.begin(), sm.end(), out.values.begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    return push(std::move(out));
  }

  /// Softmax over entries of a vector grouped by segment id (used for
  /// attention over per-node neighborhoods). Max-subtraction per segment.
  Id segment_softmax(Id a, std::vector<int> seg, std::size_t n_segments) {
    const Node& na = at(a);
    if (na.shape.size() != 1 || na.shape[0] != seg.size())
      throw ShapeMismatch("segment_softmax: " + shape_str(na.shape) + " vs " +
                          std::to_string(seg.size()) + " segment ids");
    check_segments(seg, n_segments);
    Node out;
    out.op = Op::kSegmentSoftmax;
    out.a = a;
    out.shape = na.shape;
    out.values.resize(na.values.size());
    out.c0 = static_cast<double>(n_segments);
    std::vector<T> mx(n_segments, -std::numeric_limits<T>::infinity());
    for (std::size_t e = 0; e < seg.size(); ++e)
      mx[seg[e]] = std::max(mx[seg[e]], na.values[e]);
    std::vector<T> sum(n_segments, T{0});
    for (std::size_t e = 0; e < seg.size(); ++e) {
      out.values[e] = std::exp(na.values[e] - mx[seg[e]]);
      sum[seg[e]] += out.values[e];
    }
    for (std::size_t e = 0; e < seg.size(); ++e) out.values[e] /= sum[seg[e]];
    out.idx = std::move(seg);
    return push(std::move(out));
  }

  // -- gather / concat / reshape ---------------------------------------------

  Id row_gather(Id a, std::vector<int> rows) {
    const Node& na = at(a);
    require_rank(na, 2, "row_gather");
    const std::size_t m = na.shape[0], n = na.shape[1];
    for (int r : rows)
      if (r < 0 || static_cast<std::size_t>(r) >= m)
        throw IndexOutOfRange("row_gather: row " + std::to_string(r) + " of " +
                              std::to_string(m));
    Node out;
    out.op = Op::kRowGather;
    out.a = a;
    out.shape = {rows.size(), n};
    out.values.resize(rows.size() * n);
    for (std::size_t r = 0; r < rows.size(); ++r)
      std::copy_n(&na.values[static_cast<std::size_t>(rows[r]) * n], n, &out.values[r * n]);
    out.idx = std::move(rows);
    return push(std::move(out));
  }

  Id gather_elems(Id a, std::vector<int> flat) {
    const Node& na = at(a);
    for (int i : flat)
      if (i < 0 || static_cast<std::size_t>(i) >= na.values.size())
        throw IndexOutOfRange("gather_elems: index " + std::to_string(i) + " of " +
                              std::to_string(na.values.size()));
    Node out;
    out.op = Op::kGatherElems;
    out.a = a;
    out.shape = {flat.size()};
    out.values.resize(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i)
      out.values[i] = na.values[static_cast<std::size_t>(flat[i])];
    out.idx = std::move(flat);
    return push(std::move(out));
  }

  /// Concatenate the flattened inputs into one vector, preserving order.
  Id concat(std::vector<Id> parts) {
    if (parts.empty()) throw Error("concat: no inputs");
    Node out;
    out.op = Op::kConcat;
    std::size_t total = 0;
    for (Id p : parts) total += at(p).values.size();
    out.shape = {total};
    out.values.reserve(total);
    for (Id p : parts)
      out.values.insert(out.values.end(), at(p).values.begin(), at(p).values.end());
    out.multi = std::move(parts);
    return push(std::move(out));
  }

  /// Concatenate matrices with equal row counts along columns.
  Id hstack(std::vector<Id> parts) {
    if (parts.empty()) throw Error("hstack: no inputs");
    const std::size_t m = at(parts[0]).shape[0];
    std::size_t total_cols = 0;
    for (Id p : parts) {
      const Node& np = at(p);
      require_rank(np, 2, "hstack");
      if (np.shape[0] != m)
        throw ShapeMismatch("hstack: " + shape_str(at(parts[0]).shape) + " vs " +
                            shape_str(np.shape));
      total_cols += np.shape[1];
    }
    Node out;
    out.op = Op::kHStack;
    out.shape = {m, total_cols};
    out.values.resize(m * total_cols);
    std::size_t col0 = 0;
    for (Id p : parts) {
      const Node& np = at(p);
      const std::size_t n = np.shape[1];
      for (std::size_t i = 0; i < m; ++i)
        std::copy_n(&np.values[i * n], n, &out.values[i * total_cols + col0]);
      col0 += n;
    }
    out.multi = std::move(parts);
    return push(std::move(out));
  }

  Id reshape(Id a, Shape shape) {
    const Node& na = at(a);
    if (numel(shape) != na.values.size())
      throw ShapeMismatch("reshape: " + shape_str(na.shape) + " to " + shape_str(shape));
    Node out;
    out.op = Op::kReshape;
    out.a = a;
    out.shape = std::move(shape);
    out.values = na.values;
    return push(std::move(out));
  }

  // -- segment reductions -----------------------------------------------------

  Id segment_sum(Id a, std::vector<int> seg, std::size_t n_segments) {
    return segment_reduce(Op::kSegmentSum, a, std::move(seg), n_segments);
  }
  Id segment_mean(Id a, std::vector<int> seg, std::size_t n_segments) {
    return segment_reduce(Op::kSegmentMean, a, std::move(seg), n_segments);
  }
  Id segment_max(Id a, std::vector<int> seg, std::size_t n_segments) {
    return segment_reduce(Op::kSegmentMax, a, std::move(seg), n_segments);
  }

  Id sum_all(Id a) {
    const Node& na = at(a);
    T acc{0};
    for (T v : na.values) acc += v;
    Node out;
    out.op = Op::kSumAll;
    out.a = a;
    out.shape = {1};
    out.values = {acc};
    return push(std::move(out));
  }

  Id mean_all(Id a) {
    const Node& na = at(a);
    if (na.values.empty()) throw EmptyBatch("mean_all: empty input");
    T acc{0};
    for (T v : na.values) acc += v;
    Node out;
    out.op = Op::kMeanAll;
    out.a = a;
    out.shape = {1};
    out.values = {acc / static_cast<T>(na.values.size())};
    return push(std::move(out));
  }

  // -- dropout ----------------------------------------------------------------

  /// In train mode zeroes each entry independently with probability p and
  /// scales survivors by 1/(1-p); in eval mode it is the identity.
  Id dropout(Id a, double p, bool train, std::uint64_t seed) {
    if (!(p >= 0.0 && p < 1.0)) throw Error("dropout: p must be in [0,1)");
    Node out = unary_clone(Op::kDropout, a);
    out.c0 = p;
    out.c1 = train ? 1.0 : 0.0;
    if (train && p > 0.0) {
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> uni(0.0, 1.0);
      out.idx.resize(out.values.size());
      const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
      for (std::size_t i = 0; i < out.values.size(); ++i) {
        const bool keep = uni(rng) >= p;
        out.idx[i] = keep ? 1 : 0;
        out.values[i] = keep ? out.values[i] * keep_scale : T{0};
      }
    }
    return push(std::move(out));
  }

  // -- access -----------------------------------------------------------------

  const Shape& shape(Id id) const { return at(id).shape; }
  const std::vector<T>& value(Id id) const { return at(id).values; }
  T scalar_value(Id id) const {
    const Node& n = at(id);
    if (numel(n.shape) != 1)
      throw NonScalarLoss("expected scalar, got shape " + shape_str(n.shape));
    return n.values[0];
  }
  std::size_t node_count() const { return nodes_.size(); }

  /// Gradient of a node accumulated by the last backward pass.
  const std::vector<T>& grad(Id id) const { return at(id).grad; }

  // -- backward ----------------------------------------------------------------

  /// Reverse sweep from a scalar loss. Gradients accumulate additively across
  /// fan-out; every leased requires_grad tensor receives a gradient buffer,
  /// zero-filled when it does not participate in the loss.
  void backward(Id loss) {
    if (nodes_.empty()) throw Error("backward: empty tape");
    if (numel(at(loss).shape) != 1)
      throw NonScalarLoss("backward: loss has shape " + shape_str(at(loss).shape));
    for (Node& n : nodes_) n.grad.assign(n.values.size(), T{0});
    nodes_[static_cast<std::size_t>(loss)].grad[0] = T{1};
    for (std::size_t i = nodes_.size(); i-- > 0;) backward_node(nodes_[i]);
    for (Tensor<T>* t : leased_)
      if (t->requires_grad) t->grad = nodes_[static_cast<std::size_t>(t->tape_id_)].grad;
  }

 private:
  enum class Op {
    kLeaf, kConst,
    kMatMul, kTranspose,
    kAdd, kSub, kMul,
    kAddRowVec, kMulColVec, kScaleByScalar,
    kScale, kAddConst, kPowConst, kClamp,
    kLog, kSilu, kLeakyRelu, kSigmoid,
    kSoftmaxRows, kSegmentSoftmax,
    kRowGather, kGatherElems, kConcat, kHStack, kReshape,
    kSegmentSum, kSegmentMean, kSegmentMax,
    kSumAll, kMeanAll,
    kDropout,
  };

  struct Node {
    Op op;
    Id a = -1, b = -1;
    std::vector<Id> multi;
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;
    std::vector<int> idx;   // gather indices / segment ids / argmax / dropout mask
    double c0 = 0, c1 = 0;  // op constants (scale, slope, clamp bounds, p, ...)
    Tensor<T>* param = nullptr;
  };

  Node& at(Id id) {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw IndexOutOfRange("tape node " + std::to_string(id));
    return nodes_[static_cast<std::size_t>(id)];
  }
  const Node& at(Id id) const { return const_cast<Tape*>(this)->at(id); }

  Id push(Node&& n) {
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  static void require_rank(const Node& n, std::size_t rank, const char* what) {
    if (n.shape.size() != rank)
      throw ShapeMismatch(std::string(what) + ": expected rank " + std::to_string(rank) +
                          ", got " + shape_str(n.shape));
  }

  Node unary_clone(Op op, Id a) {
    const Node& na = at(a);
    Node out;
    out.op = op;
    out.a = a;
    out.shape = na.shape;
    out.values = na.values;
    return out;
  }

  Id binary(Op op, Id a, Id b) {
    const Node &na = at(a), &nb = at(b);
    if (na.shape != nb.shape)
      throw ShapeMismatch("elementwise: " + shape_str(na.shape) + " vs " + shape_str(nb.shape));
    Node out;
    out.op = op;
    out.a = a;
    out.b = b;
    out.shape = na.shape;
    out.values.resize(na.values.size());
    switch (op) {
      case Op::kAdd:
        for (std::size_t i = 0; i < out.values.size(); ++i)
          out.values[i] = na.values[i] + nb.values[i];
        break;
      case Op::kSub:
        for (std::size_t i = 0; i < out.values.size(); ++i)
          out.values[i] = na.values[i] - nb.values[i];
        break;
      case Op::kMul:
        for (std::size_t i = 0; i < out.values.size(); ++i)
          out.values[i] = na.values[i] * nb.values[i];
        break;
      default:
        throw Error("binary: bad op");
    }
    return push(std::move(out));
  }

  static void check_segments(const std::vector<int>& seg, std::size_t n_segments) {
    for (int s : seg)
      if (s < 0 || static_cast<std::size_t>(s) >= n_segments)
        throw IndexOutOfRange("segment id " + std::to_string(s) + " of " +
                              std::to_string(n_segments));
  }

  // Segment reductions treat rank-1 input as a single-column matrix and
  // return a matching rank; output has one row per segment.
  Id segment_reduce(Op op, Id a, std::vector<int> seg, std::size_t n_segments) {
    const Node& na = at(a);
    if (na.shape.empty() || na.shape.size() > 2)
      throw ShapeMismatch("segment reduce: bad rank " + shape_str(na.shape));
    const std::size_t m = na.shape[0];
    const std::size_t n = na.shape.size() == 2 ? na.shape[1] : 1;
    if (seg.size() != m)
      throw ShapeMismatch("segment reduce: " + std::to_string(m) + " rows vs " +
                          std::to_string(seg.size()) + " segment ids");
    check_segments(seg, n_segments);

    Node out;
    out.op = op;
    out.a = a;
    out.shape = na.shape.size() == 2 ? Shape{n_segments, n} : Shape{n_segments};
    out.values.assign(n_segments * n, T{0});
    std::vector<int> count(n_segments, 0);
    for (std::size_t r = 0; r < m; ++r) ++count[seg[r]];
    for (std::size_t s = 0; s < n_segments; ++s)
      if (count[s] == 0)
        throw Error("segment reduce: segment " + std::to_string(s) + " is empty");

    if (op == Op::kSegmentMax) {
      // argmax per (segment, col); ties keep the lowest row index so backward
      // routing is deterministic.
      out.idx.assign(n_segments * n, -1);
      for (std::size_t r = 0; r < m; ++r) {
        const int s = seg[r];
        for (std::size_t j = 0; j < n; ++j) {
          const T v = na.values[r * n + j];
          int& arg = out.idx[static_cast<std::size_t>(s) * n + j];
          if (arg < 0 || v > out.values[static_cast<std::size_t>(s) * n + j]) {
            arg = static_cast<int>(r);
            out.values[static_cast<std::size_t>(s) * n + j] = v;
          }
        }
      }
    } else {
      for (std::size_t r = 0; r < m; ++r) {
        const int s = seg[r];
        for (std::size_t j = 0; j < n; ++j)
          out.values[static_cast<std::size_t>(s) * n + j] += na.values[r * n + j];
      }
      if (op == Op::kSegmentMean)
        for (std::size_t s = 0; s < n_segments; ++s)
          for (std::size_t j = 0; j < n; ++j)
            out.values[s * n + j] /= static_cast<T>(count[s]);
      out.idx.resize(n_segments);
      for (std::size_t s = 0; s < n_segments; ++s) out.idx[s] = count[s];
    }
    // Stash segment ids after the per-segment data.
    out.idx.insert(out.idx.end(), seg.begin(), seg.end());
    out.c0 = static_cast<double>(n_segments);
    return push(std::move(out));
  }

  void backward_node(Node& n) {
    const std::vector<T>& g = n.grad;
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConst:
        break;
      case Op::kMatMul: {
        Node &na = at(n.a), &nb = at(n.b);
        const std::size_t m = na.shape[0], k = na.shape[1], c = nb.shape[1];
        // dA += G * B^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t l = 0; l < k; ++l) {
            T acc{0};
            const T* grow = &g[i * c];
            const T* brow = &nb.values[l * c];
            for (std::size_t j = 0; j < c; ++j) acc += grow[j] * brow[j];
            na.grad[i * k + l] += acc;
          }
        // dB += A^T * G
        for (std::size_t l = 0; l < k; ++l)
          for (std::size_t i = 0; i < m; ++i) {
            const T av = na.values[i * k + l];
            if (av == T{0}) continue;
            const T* grow = &g[i * c];
            T* brow = &nb.grad[l * c];
            for (std::size_t j = 0; j < c; ++j) brow[j] += av * grow[j];
          }
        break;
      }
      case Op::kTranspose: {
        Node& na = at(n.a);
        const std::size_t m = na.shape[0], c = na.shape[1];
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < c; ++j) na.grad[i * c + j] += g[j * m + i];
        break;
      }
      case Op::kAdd: {
        Node &na = at(n.a), &nb = at(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) {
          na.grad[i] += g[i];
          nb.grad[i] += g[i];
        }
        break;
      }
      case Op::kSub: {
        Node &na = at(n.a), &nb = at(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) {
          na.grad[i] += g[i];
          nb.grad[i] -= g[i];
        }
        break;
      }
      case Op::kMul: {
        Node &na = at(n.a), &nb = at(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) {
          na.grad[i] += g[i] * nb.values[i];
          nb.grad[i] += g[i] * na.values[i];
        }
        break;
      }
      case Op::kAddRowVec: {
        Node &na = at(n.a), &nv = at(n.b);
        const std::size_t m = na.shape[0], c = na.shape[1];
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            na.grad[i * c + j] += g[i * c + j];
            nv.grad[j] += g[i * c + j];
          }
        break;
      }
      case Op::kMulColVec: {
        Node &na = at(n.a), &nv = at(n.b);
        const std::size_t m = na.shape[0], c = na.shape[1];
        for (std::size_t i = 0; i < m; ++i) {
          T acc{0};
          for (std::size_t j = 0; j < c; ++j) {
            na.grad[i * c + j] += g[i * c + j] * nv.values[i];
            acc += g[i * c + j] * na.values[i * c + j];
          }
          nv.grad[i] += acc;
        }
        break;
      }
      case Op::kScaleByScalar: {
        Node &na = at(n.a), &ns = at(n.b);
        const T s = ns.values[0];
        T acc{0};
        for (std::size_t i = 0; i < g.size(); ++i) {
          na.grad[i] += g[i] * s;
          acc += g[i] * na.values[i];
        }
        ns.grad[0] += acc;
        break;
      }
      case Op::kScale: {
        Node& na = at(n.a);
        const T c = static_cast<T>(n.c0);
        for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] * c;
        break;
      }
      case Op::kAddConst:
      case Op::kReshape: {
        Node& na = at(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i];
        break;
      }
      case Op::kPowConst: {
        Node& na = at(n.a);
        const double p = n.c0;
        for (std::size_t i = 0; i < g.size(); ++i)
          na.grad[i] += g[i] * static_cast<T>(p * std::pow(static_cast<double>(na.values[i]), p - 1.0));
        break;
      }
      case Op::kClamp: {
        Node& na = at(n.a);
        const T lo = static_cast<T>(n.c0), hi = static_cast<T>(n.c1);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (na.values[i] > lo && na.values[i] < hi) na.grad[i] += g[i];
        break;
      }
      case Op::kLog: {
        Node& na = at(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] / na.values[i];
        break;
      }
      case Op::kSilu: {
        Node& na = at(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T s = tagat::sigmoid(na.values[i]);
          na.grad[i] += g[i] * s * (T{1} + na.values[i] * (T{1} - s));
        }
        break;
      }
      case Op::kLeakyRelu: {
        Node& na = at(n.a);
        const T slope = static_cast<T>(n.c0);
        for (std::size_t i = 0; i < g.size(); ++i)
          na.grad[i] += g[i] * (na.values[i] > T{0} ? T{1} : slope);
        break;
      }
      case Op::kSigmoid: {
        Node& na = at(n.a);
        for (std::size_t i = 0; i < g.size(); ++i)
          na.grad[i] += g[i] * n.values[i] * (T{1} - n.values[i]);
        break;
      }
      case Op::kSoftmaxRows: {
        Node& na = at(n.a);
        const std::size_t m = n.shape[0], c = n.shape[1];
        for (std::size_t i = 0; i < m; ++i) {
          T dot{0};
          for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * n.values[i * c + j];
          for (std::size_t j = 0; j < c; ++j)
            na.grad[i * c + j] += n.values[i * c + j] * (g[i * c + j] - dot);
        }
        break;
      }
      case Op::kSegmentSoftmax: {
        Node& na = at(n.a);
        const std::size_t s_count = static_cast<std::size_t>(n.c0);
        std::vector<T> dot(s_count, T{0});
        for (std::size_t e = 0; e < g.size(); ++e) dot[n.idx[e]] += g[e] * n.values[e];
        for (std::size_t e = 0; e < g.size(); ++e)
          na.grad[e] += n.values[e] * (g[e] - dot[n.idx[e]]);
        break;
      }
      case Op::kRowGather: {
        Node& na = at(n.a);
        const std::size_t c = n.shape[1];
        for (std::size_t r = 0; r < n.idx.size(); ++r) {
          T* dst = &na.grad[static_cast<std::size_t>(n.idx[r]) * c];
          const T* src = &g[r * c];
          for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
        }
        break;
      }
      case Op::kGatherElems: {
        Node& na = at(n.a);
        for (std::size_t i = 0; i < n.idx.size(); ++i)
          na.grad[static_cast<std::size_t>(n.idx[i])] += g[i];
        break;
      }
      case Op::kConcat: {
        std::size_t off = 0;
        for (Id p : n.multi) {
          Node& np = at(p);
          for (std::size_t i = 0; i < np.values.size(); ++i) np.grad[i] += g[off + i];
          off += np.values.size();
        }
        break;
      }
      case Op::kHStack: {
        const std::size_t m = n.shape[0], total = n.shape[1];
        std::size_t col0 = 0;
        for (Id p : n.multi) {
          Node& np = at(p);
          const std::size_t c = np.shape[1];
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j)
              np.grad[i * c + j] += g[i * total + col0 + j];
          col0 += c;
        }
        break;
      }
      case Op::kSegmentSum:
      case Op::kSegmentMean: {
        Node& na = at(n.a);
        const std::size_t s_count = static_cast<std::size_t>(n.c0);
        const std::size_t m = na.shape[0];
        const std::size_t c = na.shape.size() == 2 ? na.shape[1] : 1;
        const int* counts = n.idx.data();
        const int* seg = n.idx.data() + s_count;
        for (std::size_t r = 0; r < m; ++r) {
          const std::size_t s = static_cast<std::size_t>(seg[r]);
          const T scale_r = n.op == Op::kSegmentMean
                                ? T{1} / static_cast<T>(counts[s])
                                : T{1};
          for (std::size_t j = 0; j < c; ++j)
            na.grad[r * c + j] += g[s * c + j] * scale_r;
        }
        break;
      }
      case Op::kSegmentMax: {
        Node& na = at(n.a);
        const std::size_t s_count = static_cast<std::size_t>(n.c0);
        const std::size_t c = na.shape.size() == 2 ? na.shape[1] : 1;
        for (std::size_t s = 0; s < s_count; ++s)
          for (std::size_t j = 0; j < c; ++j) {
            const int r = n.idx[s * c + j];
            na.grad[static_cast<std::size_t>(r) * c + j] += g[s * c + j];
          }
        break;
      }
      case Op::kSumAll: {
        Node& na = at(n.a);
        for (std::size_t i = 0; i < na.grad.size(); ++i) na.grad[i] += g[0];
        break;
      }
      case Op::kMeanAll: {
        Node& na = at(n.a);
        const T inv = T{1} / static_cast<T>(na.grad.size());
        for (std::size_t i = 0; i < na.grad.size(); ++i) na.grad[i] += g[0] * inv;
        break;
      }
      case Op::kDropout: {
        Node& na = at(n.a);
        const bool train = n.c1 != 0.0;
        if (!train || n.c0 == 0.0) {
          for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i];
        } else {
          const T keep_scale = static_cast<T>(1.0 / (1.0 - n.c0));
          for (std::size_t i = 0; i < g.size(); ++i)
            if (n.idx[i]) na.grad[i] += g[i] * keep_scale;
        }
        break;
      }
    }
  }

  void release_leases() {
    for (Tensor<T>* t : leased_) {
      t->tape_ = nullptr;
      t->tape_id_ = -1;
    }
    leased_.clear();
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<T>*> leased_;
};

/// Compare the analytic gradient of a tape program against central finite
/// differences, coordinate by coordinate. Returns the max relative error with
/// denominator max(|analytic|, |numeric|, 1e-8).
template <typename T>
double grad_check(const std::function<typename Tape<T>::Id(Tape<T>&)>& build,
                  const std::vector<Tensor<T>*>& params, double eps) {
  std::vector<std::vector<T>> analytic;
  {
    Tape<T> tape;
    const auto loss = build(tape);
    tape.backward(loss);
    for (Tensor<T>* p : params) analytic.push_back(p->grad);
  }
  const auto eval = [&]() {
    Tape<T> tape;
    return static_cast<double>(tape.scalar_value(build(tape)));
  };
  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>& p = *params[pi];
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const T saved = p.values[i];
      p.values[i] = saved + static_cast<T>(eps);
      const double fp = eval();
      p.values[i] = saved - static_cast<T>(eps);
      const double fm = eval();
      p.values[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = static_cast<double>(analytic[pi][i]);
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace tagat
