#pragma once

// Reverse-mode automatic differentiation over dense float64 arrays.
//
// A Tensor is a shared handle to a row-major buffer. Operations executed while
// a Tape is active (see TapeScope) and that touch a tensor requiring gradients
// are recorded on that tape; `backward` replays them in reverse. Leaves such as
// model parameters are never recorded, so many threads may build independent
// tapes over the same read-only parameters.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <cctype>
#include <concepts>
#include <new>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <unordered_map>
#include <utility>
#include <vector>

#include "trans2d/errors.hpp"
#include "trans2d/rng.hpp"

namespace trans2d::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

namespace detail {

// 64-byte aligned storage. Eigen peels vectorized loops by address, so buffers
// with varying alignment would round differently from run to run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};

}  // namespace detail

using Buffer = std::vector<double, detail::AlignedAllocator<double>>;

class Tape;
class Tensor;
class GradientMap;

namespace detail {

struct Node {
  Shape shape;
  Buffer data;
  Buffer grad;
  bool requires_grad = false;
  const Tape* tape = nullptr;
  std::size_t tape_index = 0;
};

using NodePtr = std::shared_ptr<Node>;

inline thread_local Tape* active_tape = nullptr;

inline std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// Calls fn(dst_index, src_offset) for every element of `shape` in row-major
// order, where src_offset = sum(index[k] * src_strides[k]).
template <typename Fn>
void for_each_offset(const Shape& shape, const std::vector<std::size_t>& src_strides, Fn&& fn) {
  const std::size_t total = numel(shape);
  if (total == 0) return;
  const std::size_t rank = shape.size();
  if (rank == 0) {
    fn(std::size_t{0}, std::size_t{0});
    return;
  }
  std::vector<std::size_t> idx(rank, 0);
  const std::size_t inner = shape[rank - 1];
  const std::size_t inner_stride = src_strides[rank - 1];
  std::size_t offset = 0;
  for (std::size_t dst = 0; dst < total; dst += inner) {
    std::size_t o = offset;
    for (std::size_t k = 0; k < inner; ++k, o += inner_stride) fn(dst + k, o);
    for (std::size_t axis = rank - 1; axis-- > 0;) {
      ++idx[axis];
      offset += src_strides[axis];
      if (idx[axis] < shape[axis]) break;
      offset -= src_strides[axis] * shape[axis];
      idx[axis] = 0;
    }
  }
}

inline Buffer permute(std::span<const double> src, const Shape& shape,
                                   const std::vector<std::size_t>& perm, Shape& out_shape) {
  out_shape.resize(perm.size());
  bool identity = true;
  for (std::size_t k = 0; k < perm.size(); ++k) {
    out_shape[k] = shape[perm[k]];
    identity = identity && perm[k] == k;
  }
  if (identity) return {src.begin(), src.end()};
  const auto src_strides = strides_of(shape);
  std::vector<std::size_t> permuted(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) permuted[k] = src_strides[perm[k]];
  Buffer out(src.size());
  for_each_offset(out_shape, permuted, [&](std::size_t d, std::size_t s) { out[d] = src[s]; });
  return out;
}

inline void add_into(Buffer& dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

inline void add_into_span(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, const std::vector<double>& data, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer(data.begin(), data.end()), requires_grad) {}

  template <typename B>
    requires std::same_as<B, Buffer>
  Tensor(Shape shape, B data, bool requires_grad = false) : node_(std::make_shared<detail::Node>()) {
    if (numel(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), Buffer(n, 0.0), requires_grad);
  }
  static Tensor filled(Shape shape, double value) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), Buffer(n, value));
  }
  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, Buffer{value}, requires_grad);
  }
  static Tensor vector(const std::vector<double>& values, bool requires_grad = false) {
    const auto n = values.size();
    return Tensor({n}, values, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }

  // Writable view of a leaf's values (parameter initialization, optimizer
  // updates, finite-difference perturbation).
  std::span<double> mutable_data() {
    if (node_->tape != nullptr) throw std::logic_error("cannot mutate a recorded tensor");
    return node_->data;
  }

  double item() const {
    if (size() != 1) throw RankError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  double at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw DimensionError("index rank mismatch");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
      if (i >= node_->shape[axis]) throw std::out_of_range("tensor index out of range");
      flat = flat * node_->shape[axis] + i;
      ++axis;
    }
    return node_->data[flat];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool value) {
    if (node_->tape != nullptr) throw std::logic_error("requires_grad is fixed for recorded tensors");
    node_->requires_grad = value;
  }

  bool is_leaf() const { return node_->tape == nullptr; }

  // Accumulated gradient of a leaf; empty until something is accumulated.
  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  Buffer& grad_buffer() {
    if (node_->grad.size() != node_->data.size()) node_->grad.assign(node_->data.size(), 0.0);
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  const void* id() const { return node_.get(); }

 private:
  friend class Tape;
  friend class GradientMap;
  friend GradientMap backward(const Tensor& loss, Tape& tape);

  detail::NodePtr node_;
};

class GradientMap {
 public:
  // True when the loss did not depend on any tensor requiring gradients.
  bool detached() const { return detached_; }
  bool contains(const Tensor& t) const { return grads_.count(t.node_.get()) != 0; }
  std::size_t size() const { return grads_.size(); }

  // Gradient for a leaf; zeros when the leaf was unreachable from the loss.
  std::vector<double> get(const Tensor& t) const {
    auto it = grads_.find(t.node_.get());
    if (it == grads_.end()) return std::vector<double>(t.size(), 0.0);
    return {it->second.second.begin(), it->second.second.end()};
  }

  // Gradient for a leaf, or nullptr when it was unreachable.
  const Buffer* find(const Tensor& t) const {
    auto it = grads_.find(t.node_.get());
    return it == grads_.end() ? nullptr : &it->second.second;
  }

  // Adds every gradient into its leaf's grad buffer.
  void accumulate_into_leaves() const {
    for (const auto& [key, entry] : grads_) {
      auto& node = *entry.first;
      if (node.grad.size() != node.data.size()) node.grad.assign(node.data.size(), 0.0);
      detail::add_into(node.grad, entry.second);
    }
  }

 private:
  friend GradientMap backward(const Tensor& loss, Tape& tape);

  Buffer& slot(const detail::NodePtr& node) {
    auto& entry = grads_[node.get()];
    if (!entry.first) {
      entry.first = node;
      entry.second.assign(node->data.size(), 0.0);
    }
    return entry.second;
  }

  bool detached_ = false;
  std::unordered_map<const detail::Node*, std::pair<detail::NodePtr, Buffer>> grads_;
};

class Tape {
 public:
  using BackwardFn =
      std::function<void(std::span<const double> grad_out, std::span<Buffer* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return records_.size(); }

  void record(Tensor& output, std::vector<Tensor> inputs, BackwardFn fn) {
    auto& node = *output.node_;
    node.requires_grad = true;
    node.tape = this;
    node.tape_index = records_.size();
    Record rec;
    rec.output = output.node_;
    rec.inputs.reserve(inputs.size());
    for (auto& in : inputs) rec.inputs.push_back(std::move(in.node_));
    rec.backward = std::move(fn);
    records_.push_back(std::move(rec));
  }

 private:
  friend GradientMap backward(const Tensor& loss, Tape& tape);

  struct Record {
    detail::NodePtr output;
    std::vector<detail::NodePtr> inputs;
    BackwardFn backward;
  };
  std::vector<Record> records_;
};

// Makes `tape` the recording target for the current thread while in scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(detail::active_tape) { detail::active_tape = &tape; }
  ~TapeScope() { detail::active_tape = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording on the current thread.
class NoGradScope {
 public:
  NoGradScope() : previous_(detail::active_tape) { detail::active_tape = nullptr; }
  ~NoGradScope() { detail::active_tape = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

inline GradientMap backward(const Tensor& loss, Tape& tape) {
  if (loss.size() != 1) {
    throw RankError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  GradientMap result;
  const auto& root = loss.node_;
  if (!root->requires_grad) {
    result.detached_ = true;
    return result;
  }
  if (root->tape == nullptr) {
    result.slot(root)[0] = 1.0;
    return result;
  }
  if (root->tape != &tape) throw std::logic_error("loss was recorded on a different tape");

  std::vector<Buffer> grads(root->tape_index + 1);
  grads[root->tape_index].assign(1, 1.0);
  std::vector<Buffer*> grad_in;
  for (std::size_t i = root->tape_index + 1; i-- > 0;) {
    if (grads[i].empty()) continue;
    auto& rec = tape.records_[i];
    grad_in.assign(rec.inputs.size(), nullptr);
    for (std::size_t k = 0; k < rec.inputs.size(); ++k) {
      const auto& in = rec.inputs[k];
      if (!in->requires_grad) continue;
      if (in->tape == &tape) {
        auto& g = grads[in->tape_index];
        if (g.empty()) g.assign(in->data.size(), 0.0);
        grad_in[k] = &g;
      } else if (in->tape == nullptr) {
        grad_in[k] = &result.slot(in);
      } else {
        throw std::logic_error("operation input was recorded on a different tape");
      }
    }
    rec.backward(grads[i], grad_in);
    Buffer().swap(grads[i]);
  }
  return result;
}

namespace detail {

inline Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = active_tape;
  if (tape == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

inline Tape* recording_tape(std::span<const Tensor> inputs) {
  Tape* tape = active_tape;
  if (tape == nullptr) return nullptr;
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) return tape;
  }
  return nullptr;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Contraction

/// Einsum-style descriptor "ab,bc->ac". Each letter names an axis. A letter in
/// both operands and the output is batched, in both operands only is summed,
/// in one operand and the output is kept. Every operand axis must appear in at
/// least one other term; no letter repeats within a term.
class Contraction {
 public:
  static Contraction parse(std::string_view text) {
    const auto comma = text.find(',');
    const auto arrow = text.find("->");
    if (comma == std::string_view::npos || arrow == std::string_view::npos || comma > arrow) {
      throw std::invalid_argument("contraction must look like 'ij,jk->ik': " + std::string(text));
    }
    return Contraction(std::string(text.substr(0, comma)),
                       std::string(text.substr(comma + 1, arrow - comma - 1)),
                       std::string(text.substr(arrow + 2)));
  }

  static Contraction matmul() { return parse("ij,jk->ik"); }
  static Contraction batched_matmul() { return parse("bij,bjk->bik"); }
  static Contraction inner() { return parse("i,i->"); }

  Contraction(std::string lhs, std::string rhs, std::string out)
      : lhs_(std::move(lhs)), rhs_(std::move(rhs)), out_(std::move(out)) {
    auto check_term = [](const std::string& term) {
      for (std::size_t i = 0; i < term.size(); ++i) {
        if (!std::isalpha(static_cast<unsigned char>(term[i]))) {
          throw std::invalid_argument("contraction axis labels must be letters: '" + term + "'");
        }
        if (term.find(term[i], i + 1) != std::string::npos) {
          throw std::invalid_argument(std::string("axis '") + term[i] + "' repeated in '" + term + "'");
        }
      }
    };
    check_term(lhs_);
    check_term(rhs_);
    check_term(out_);
    auto has = [](const std::string& s, char c) { return s.find(c) != std::string::npos; };
    for (char c : out_) {
      if (!has(lhs_, c) && !has(rhs_, c)) {
        throw std::invalid_argument(std::string("output axis '") + c + "' appears in no operand");
      }
    }
    for (char c : lhs_) {
      if (!has(rhs_, c) && !has(out_, c)) {
        throw std::invalid_argument(std::string("axis '") + c + "' is reduced within one operand");
      }
    }
    for (char c : rhs_) {
      if (!has(lhs_, c) && !has(out_, c)) {
        throw std::invalid_argument(std::string("axis '") + c + "' is reduced within one operand");
      }
    }
  }

  const std::string& lhs() const { return lhs_; }
  const std::string& rhs() const { return rhs_; }
  const std::string& out() const { return out_; }
  std::string str() const { return lhs_ + "," + rhs_ + "->" + out_; }

  // d lhs = contract(d out, rhs); d rhs = contract(d out, lhs).
  Contraction lhs_adjoint() const { return Contraction(out_, rhs_, lhs_); }
  Contraction rhs_adjoint() const { return Contraction(out_, lhs_, rhs_); }

 private:
  std::string lhs_, rhs_, out_;
};

namespace detail {

struct RawTensor {
  Shape shape;
  Buffer data;
};

// Axis groups of a contraction: batch (in both operands and the output), kept
// from each operand, and summed.
struct ContractionPlan {
  std::size_t extent[128] = {};
  std::string batch, keep_a, keep_b, summed;
  Shape out_shape;

  std::size_t product(const std::string& s) const {
    std::size_t p = 1;
    for (char c : s) p *= extent[static_cast<unsigned char>(c)];
    return p;
  }
};

inline ContractionPlan plan_contraction(const Shape& a_shape, const Shape& b_shape, const Contraction& spec) {
  const auto& la = spec.lhs();
  const auto& lb = spec.rhs();
  const auto& lo = spec.out();
  if (la.size() != a_shape.size()) {
    throw DimensionError("contraction " + spec.str() + ": left operand has rank " + std::to_string(a_shape.size()));
  }
  if (lb.size() != b_shape.size()) {
    throw DimensionError("contraction " + spec.str() + ": right operand has rank " + std::to_string(b_shape.size()));
  }
  ContractionPlan p;
  for (std::size_t i = 0; i < la.size(); ++i) p.extent[static_cast<unsigned char>(la[i])] = a_shape[i];
  for (std::size_t i = 0; i < lb.size(); ++i) {
    auto& e = p.extent[static_cast<unsigned char>(lb[i])];
    if (e != 0 && e != b_shape[i]) {
      throw DimensionError("contraction " + spec.str() + ": axis '" + std::string(1, lb[i]) + "' has extent " +
                           std::to_string(e) + " vs " + std::to_string(b_shape[i]));
    }
    e = b_shape[i];
  }
  auto in = [](const std::string& s, char c) { return s.find(c) != std::string::npos; };
  for (char c : lo) {
    if (in(la, c) && in(lb, c)) p.batch += c;
    else if (in(la, c)) p.keep_a += c;
    else p.keep_b += c;
    p.out_shape.push_back(p.extent[static_cast<unsigned char>(c)]);
  }
  for (char c : la) {
    if (in(lb, c) && !in(lo, c)) p.summed += c;
  }
  return p;
}

// Strided view of one operand (or the output) as a batch of matrices.
struct MatrixView {
  std::span<const double> storage;
  Buffer owned;  // set when the operand had to be permuted
  std::ptrdiff_t row_stride = 0, col_stride = 0;
  std::vector<std::size_t> batch_strides;
};

// Single stride covering `group` when its axes are laid out contiguously in
// that order; nullopt otherwise.
inline std::optional<std::size_t> merged_stride(const std::string& group, const std::string& term,
                                                const std::vector<std::size_t>& strides, const ContractionPlan& p) {
  if (group.empty()) return 1;
  for (std::size_t i = 0; i + 1 < group.size(); ++i) {
    const auto s0 = strides[term.find(group[i])];
    const auto s1 = strides[term.find(group[i + 1])];
    if (s0 != s1 * p.extent[static_cast<unsigned char>(group[i + 1])]) return std::nullopt;
  }
  return strides[term.find(group.back())];
}

inline MatrixView view_operand(std::span<const double> data, const Shape& shape, const std::string& term,
                               const std::string& rows, const std::string& cols, const ContractionPlan& p) {
  MatrixView v;
  auto strides = strides_of(shape);
  auto rs = merged_stride(rows, term, strides, p);
  auto cs = merged_stride(cols, term, strides, p);
  std::string order_term = term;
  if (!rs || !cs || (*rs != 1 && *cs != 1)) {
    // Fall back to a copy laid out as [batch | rows | cols].
    order_term = p.batch + rows + cols;
    std::vector<std::size_t> perm;
    for (char c : order_term) perm.push_back(term.find(c));
    Shape permuted_shape;
    v.owned = permute(data, shape, perm, permuted_shape);
    strides = strides_of(permuted_shape);
    rs = merged_stride(rows, order_term, strides, p);
    cs = merged_stride(cols, order_term, strides, p);
    v.storage = v.owned;
  } else {
    v.storage = data;
  }
  v.row_stride = static_cast<std::ptrdiff_t>(*rs);
  v.col_stride = static_cast<std::ptrdiff_t>(*cs);
  for (char c : p.batch) v.batch_strides.push_back(strides[order_term.find(c)]);
  return v;
}

template <typename Fn>
void for_each_batch(const ContractionPlan& p, Fn&& fn) {
  const std::size_t nb = p.product(p.batch);
  std::vector<std::size_t> idx(p.batch.size(), 0);
  for (std::size_t b = 0; b < nb; ++b) {
    fn(idx);
    for (std::size_t k = idx.size(); k-- > 0;) {
      if (++idx[k] < p.extent[static_cast<unsigned char>(p.batch[k])]) break;
      idx[k] = 0;
    }
  }
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

template <typename Mat, typename Ptr>
auto map_strided(Ptr ptr, std::size_t rows, std::size_t cols, std::ptrdiff_t outer) {
  using Base = std::conditional_t<std::is_const_v<std::remove_pointer_t<Ptr>>, const Mat, Mat>;
  return Eigen::Map<Base, 0, Eigen::OuterStride<>>(ptr, static_cast<Eigen::Index>(rows),
                                                   static_cast<Eigen::Index>(cols), Eigen::OuterStride<>(outer));
}

// dst (laid out as spec.out()) = or += contraction of a and b.
inline void contract_into(std::span<const double> a, const Shape& a_shape, std::span<const double> b,
                          const Shape& b_shape, const Contraction& spec, const ContractionPlan& p,
                          std::span<double> dst, bool accumulate) {
  const std::size_t m = p.product(p.keep_a), n = p.product(p.keep_b), k = p.product(p.summed);
  const auto A = view_operand(a, a_shape, spec.lhs(), p.keep_a, p.summed, p);
  const auto B = view_operand(b, b_shape, spec.rhs(), p.summed, p.keep_b, p);

  const auto out_strides = strides_of(p.out_shape);
  auto out_rs = merged_stride(p.keep_a, spec.out(), out_strides, p);
  auto out_cs = merged_stride(p.keep_b, spec.out(), out_strides, p);
  const bool direct = out_rs && out_cs && (*out_rs == 1 || *out_cs == 1);
  Buffer grouped;
  std::vector<std::size_t> c_batch_strides;
  std::ptrdiff_t c_rs, c_cs;
  double* c_base;
  if (direct) {
    c_base = dst.data();
    c_rs = static_cast<std::ptrdiff_t>(*out_rs);
    c_cs = static_cast<std::ptrdiff_t>(*out_cs);
    for (char c : p.batch) c_batch_strides.push_back(out_strides[spec.out().find(c)]);
  } else {
    grouped.assign(p.product(p.batch) * m * n, 0.0);
    c_base = grouped.data();
    c_rs = static_cast<std::ptrdiff_t>(n);
    c_cs = 1;
    std::size_t s = m * n;
    c_batch_strides.assign(p.batch.size(), 0);
    for (std::size_t i = p.batch.size(); i-- > 0;) {
      c_batch_strides[i] = s;
      s *= p.extent[static_cast<unsigned char>(p.batch[i])];
    }
  }
  const bool add = accumulate || !direct;
  if (!accumulate && direct) std::fill(dst.begin(), dst.end(), 0.0);

  for_each_batch(p, [&](const std::vector<std::size_t>& idx) {
    std::size_t oa = 0, ob = 0, oc = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      oa += idx[i] * A.batch_strides[i];
      ob += idx[i] * B.batch_strides[i];
      oc += idx[i] * c_batch_strides[i];
    }
    const double* pa = A.storage.data() + oa;
    const double* pb = B.storage.data() + ob;
    double* pc = c_base + oc;
    auto run = [&](auto&& ma, auto&& mb) {
      if (c_cs == 1) {
        auto mc = map_strided<RowMat>(pc, m, n, c_rs);
        if (add) mc.noalias() += ma * mb;
        else mc.noalias() = ma * mb;
      } else {
        auto mc = map_strided<ColMat>(pc, m, n, c_cs);
        if (add) mc.noalias() += ma * mb;
        else mc.noalias() = ma * mb;
      }
    };
    auto with_b = [&](auto&& ma) {
      if (B.col_stride == 1) run(ma, map_strided<RowMat>(pb, k, n, B.row_stride));
      else run(ma, map_strided<ColMat>(pb, k, n, B.col_stride));
    };
    if (A.col_stride == 1) with_b(map_strided<RowMat>(pa, m, k, A.row_stride));
    else with_b(map_strided<ColMat>(pa, m, k, A.col_stride));
  });

  if (!direct) {
    const std::string grouped_order = p.batch + p.keep_a + p.keep_b;
    Shape grouped_shape;
    for (char c : grouped_order) grouped_shape.push_back(p.extent[static_cast<unsigned char>(c)]);
    std::vector<std::size_t> perm;
    for (char c : spec.out()) perm.push_back(grouped_order.find(c));
    Shape out_shape;
    auto permuted = permute(grouped, grouped_shape, perm, out_shape);
    if (accumulate) add_into_span(dst, permuted);
    else std::copy(permuted.begin(), permuted.end(), dst.begin());
  }
}

inline RawTensor contract_raw(std::span<const double> a, const Shape& a_shape, std::span<const double> b,
                              const Shape& b_shape, const Contraction& spec) {
  const auto p = plan_contraction(a_shape, b_shape, spec);
  RawTensor out;
  out.shape = p.out_shape;
  out.data.resize(numel(out.shape));
  contract_into(a, a_shape, b, b_shape, spec, p, out.data, false);
  return out;
}

}  // namespace detail

inline Tensor contract(const Tensor& a, const Tensor& b, const Contraction& spec) {
  auto raw = detail::contract_raw(a.data(), a.shape(), b.data(), b.shape(), spec);
  Tensor out(std::move(raw.shape), std::move(raw.data));
  if (Tape* tape = detail::recording_tape({&a, &b})) {
    tape->record(out, {a, b}, [a, b, spec, out_shape = out.shape()](auto g, auto gin) {
      if (gin[0]) {
        const auto adj = spec.lhs_adjoint();
        detail::contract_into(g, out_shape, b.data(), b.shape(), adj,
                              detail::plan_contraction(out_shape, b.shape(), adj), *gin[0], true);
      }
      if (gin[1]) {
        const auto adj = spec.rhs_adjoint();
        detail::contract_into(g, out_shape, a.data(), a.shape(), adj,
                              detail::plan_contraction(out_shape, a.shape(), adj), *gin[1], true);
      }
    });
  }
  return out;
}

inline Tensor contract(const Tensor& a, const Tensor& b, std::string_view spec) {
  return contract(a, b, Contraction::parse(spec));
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Buffer y(a.size());
  auto x0 = a.data(), x1 = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x0[i] + x1[i];
  Tensor out(a.shape(), std::move(y));
  if (Tape* tape = detail::recording_tape({&a, &b})) {
    tape->record(out, {a, b}, [](auto g, auto gin) {
      for (auto* dst : gin) {
        if (dst) detail::add_into(*dst, g);
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  Buffer y(a.size());
  auto x0 = a.data(), x1 = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x0[i] * x1[i];
  Tensor out(a.shape(), std::move(y));
  if (Tape* tape = detail::recording_tape({&a, &b})) {
    tape->record(out, {a, b}, [a, b](auto g, auto gin) {
      auto x0 = a.data(), x1 = b.data();
      if (gin[0]) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * x1[i];
      }
      if (gin[1]) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * x0[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& x, double factor) {
  Buffer y(x.data().begin(), x.data().end());
  for (auto& v : y) v *= factor;
  Tensor out(x.shape(), std::move(y));
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record(out, {x}, [factor](auto g, auto gin) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * factor;
    });
  }
  return out;
}

// x scaled by a one-element tensor (a learned scalar).
inline Tensor mul_scalar(const Tensor& x, const Tensor& s) {
  if (s.size() != 1) throw RankError("mul_scalar expects a one-element factor");
  const double factor = s.item();
  Buffer y(x.data().begin(), x.data().end());
  for (auto& v : y) v *= factor;
  Tensor out(x.shape(), std::move(y));
  if (Tape* tape = detail::recording_tape({&x, &s})) {
    tape->record(out, {x, s}, [x, factor](auto g, auto gin) {
      if (gin[0]) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * factor;
      }
      if (gin[1]) {
        auto xv = x.data();
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
        (*gin[1])[0] += acc;
      }
    });
  }
  return out;
}

inline Tensor relu(const Tensor& x) {
  Buffer y(x.size());
  auto xv = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  Tensor out(x.shape(), std::move(y));
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record(out, {x}, [x](auto g, auto gin) {
      auto xv = x.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xv[i] > 0.0) (*gin[0])[i] += g[i];
      }
    });
  }
  return out;
}

inline double sigmoid(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

inline Tensor sigmoid(const Tensor& x) {
  Buffer y(x.size());
  auto xv = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = sigmoid(xv[i]);
  Tensor out(x.shape(), y);
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record(out, {x}, [y = std::move(y)](auto g, auto gin) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * y[i] * (1.0 - y[i]);
    });
  }
  return out;
}

/// Inverted dropout: survivors are scaled by 1/(1-p). Identity when not
/// training or p == 0; the sampled mask is kept for the backward pass.
inline Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout probability must be in [0, 1)");
  if (!training || p == 0.0) return x;
  const double keep = 1.0 / (1.0 - p);
  Buffer mask(x.size());
  for (auto& m : mask) m = rng.uniform() < p ? 0.0 : keep;
  Buffer y(x.size());
  auto xv = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * mask[i];
  Tensor out(x.shape(), std::move(y));
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record(out, {x}, [mask = std::move(mask)](auto g, auto gin) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * mask[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

/// Softmax over the last axis. -inf entries map to exactly 0; a slice that is
/// entirely -inf raises DegenerateMaskError.
inline Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() == 0) throw DimensionError("softmax needs at least one axis");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.size() / width;
  auto xv = x.data();
  Buffer y(x.size());
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * width;
    double* out = y.data() + r * width;
    double mx = kNegInf;
    for (std::size_t i = 0; i < width; ++i) mx = std::max(mx, in[i]);
    if (mx == kNegInf) {
      throw DegenerateMaskError("softmax slice " + std::to_string(r) + " is entirely masked");
    }
    Eigen::Map<const Eigen::ArrayXd> src(in, static_cast<Eigen::Index>(width));
    Eigen::Map<Eigen::ArrayXd> dst(out, static_cast<Eigen::Index>(width));
    dst = (src - mx).exp();
    // The vectorized exp underflows to a tiny positive value at -inf.
    for (std::size_t i = 0; i < width; ++i) {
      if (in[i] == kNegInf) out[i] = 0.0;
    }
    dst *= 1.0 / dst.sum();
  }
  Tensor out(x.shape(), y);
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record(out, {x}, [y = std::move(y), width](auto g, auto gin) {
      auto& dx = *gin[0];
      for (std::size_t base = 0; base < g.size(); base += width) {
        double dot = 0.0;
        for (std::size_t i = 0; i < width; ++i) dot += g[base + i] * y[base + i];
        for (std::size_t i = 0; i < width; ++i) dx[base + i] += y[base + i] * (g[base + i] - dot);
      }
    });
  }
  return out;
}

/// Normalizes each last-axis slice to zero mean and unit variance (biased),
/// then applies gain and bias of the last-axis extent.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm: tensor has no axis to normalize");
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain/bias extent must equal last axis " + std::to_string(d));
  }
  if (eps < 0.0) throw std::invalid_argument("layer_norm: eps must be non-negative");
  const std::size_t rows = x.size() / d;
  auto xv = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  Buffer xhat(x.size());
  Buffer inv_std(rows);
  Buffer y(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += in[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (in[i] - mean) * (in[i] - mean);
    var /= static_cast<double>(d);
    if (var + eps <= 0.0) throw NumericError("layer_norm: zero variance with eps = 0");
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (in[i] - mean) * inv;
      y[r * d + i] = xhat[r * d + i] * gv[i] + bv[i];
    }
  }
  Tensor out(x.shape(), std::move(y));
  if (Tape* tape = detail::recording_tape({&x, &gain, &bias})) {
    tape->record(out, {x, gain, bias},
                 [xhat = std::move(xhat), inv_std = std::move(inv_std), gain, d](auto g, auto gin) {
                   auto gv = gain.data();
                   const double dd = static_cast<double>(d);
                   for (std::size_t r = 0; r < inv_std.size(); ++r) {
                     const double* go = g.data() + r * d;
                     const double* xh = xhat.data() + r * d;
                     if (gin[1]) {
                       for (std::size_t i = 0; i < d; ++i) (*gin[1])[i] += go[i] * xh[i];
                     }
                     if (gin[2]) {
                       for (std::size_t i = 0; i < d; ++i) (*gin[2])[i] += go[i];
                     }
                     if (gin[0]) {
                       double sum_dx = 0.0, sum_dx_xh = 0.0;
                       for (std::size_t i = 0; i < d; ++i) {
                         const double dxh = go[i] * gv[i];
                         sum_dx += dxh;
                         sum_dx_xh += dxh * xh[i];
                       }
                       double* dx = gin[0]->data() + r * d;
                       for (std::size_t i = 0; i < d; ++i) {
                         const double dxh = go[i] * gv[i];
                         dx[i] += inv_std[r] / dd * (dd * dxh - sum_dx - xh[i] * sum_dx_xh);
                       }
                     }
                   }
                 });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor out(std::move(shape), Buffer(x.data().begin(), x.data().end()));
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record(out, {x}, [](auto g, auto gin) { detail::add_into(*gin[0], g); });
  }
  return out;
}

inline Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t k = 0; k < first.size(); ++k) {
      if (k != axis && p.dim(k) != first[k]) {
        throw DimensionError("concat: extent mismatch on axis " + std::to_string(k));
      }
    }
    shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= first[k];
  for (std::size_t k = axis + 1; k < first.size(); ++k) inner *= first[k];
  const std::size_t out_row = shape[axis] * inner;
  Buffer y(numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t chunk = p.dim(axis) * inner;
    auto src = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.data() + o * chunk, chunk, y.data() + o * out_row + off);
    }
    off += chunk;
  }
  Tensor out(std::move(shape), std::move(y));
  if (Tape* tape = detail::recording_tape(parts)) {
    std::vector<std::size_t> chunks;
    for (const auto& p : parts) chunks.push_back(p.dim(axis) * inner);
    tape->record(out, {parts.begin(), parts.end()},
                 [offsets, chunks, outer, out_row](auto g, auto gin) {
                   for (std::size_t k = 0; k < gin.size(); ++k) {
                     if (!gin[k]) continue;
                     for (std::size_t o = 0; o < outer; ++o) {
                       const double* src = g.data() + o * out_row + offsets[k];
                       double* dst = gin[k]->data() + o * chunks[k];
                       for (std::size_t i = 0; i < chunks[k]; ++i) dst[i] += src[i];
                     }
                   }
                 });
  }
  return out;
}

inline Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

// Entries [begin, end) along `axis`.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin >= end || end > x.dim(axis)) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for shape " + shape_str(x.shape()));
  }
  Shape shape = x.shape();
  shape[axis] = end - begin;
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= shape[k];
  for (std::size_t k = axis + 1; k < shape.size(); ++k) inner *= shape[k];
  const std::size_t src_row = x.dim(axis) * inner;
  const std::size_t dst_row = shape[axis] * inner;
  const std::size_t start = begin * inner;
  Buffer y(numel(shape));
  auto src = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(src.data() + o * src_row + start, dst_row, y.data() + o * dst_row);
  }
  Tensor out(std::move(shape), std::move(y));
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record(out, {x}, [outer, src_row, dst_row, start](auto g, auto gin) {
      for (std::size_t o = 0; o < outer; ++o) {
        double* dst = gin[0]->data() + o * src_row + start;
        const double* s = g.data() + o * dst_row;
        for (std::size_t i = 0; i < dst_row; ++i) dst[i] += s[i];
      }
    });
  }
  return out;
}

/// Broadcasts x into `shape`; axis k of x becomes axis axis_map[k] of the
/// result (an extent-1 axis may stretch) and every other result axis repeats it.
inline Tensor expand(const Tensor& x, Shape shape, const std::vector<std::size_t>& axis_map) {
  if (axis_map.size() != x.rank()) throw DimensionError("expand: axis map rank mismatch");
  const auto src_strides = detail::strides_of(x.shape());
  std::vector<std::size_t> strides(shape.size(), 0);
  for (std::size_t k = 0; k < axis_map.size(); ++k) {
    if (axis_map[k] >= shape.size() || (shape[axis_map[k]] != x.dim(k) && x.dim(k) != 1)) {
      throw DimensionError("expand " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    strides[axis_map[k]] = x.dim(k) == 1 ? 0 : src_strides[k];
  }
  Buffer y(numel(shape));
  auto xv = x.data();
  detail::for_each_offset(shape, strides, [&](std::size_t d, std::size_t s) { y[d] = xv[s]; });
  Tensor out(shape, std::move(y));
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record(out, {x}, [shape, strides](auto g, auto gin) {
      auto& dx = *gin[0];
      detail::for_each_offset(shape, strides, [&](std::size_t d, std::size_t s) { dx[s] += g[d]; });
    });
  }
  return out;
}

// Entries where mask != 0 are replaced by `value` and receive no gradient.
inline Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value) {
  if (mask.size() != x.size()) throw DimensionError("masked_fill: mask size mismatch");
  Buffer y(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (mask[i]) y[i] = value;
  }
  Tensor out(x.shape(), std::move(y));
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record(out, {x}, [mask = std::vector<std::uint8_t>(mask.begin(), mask.end())](auto g, auto gin) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!mask[i]) (*gin[0])[i] += g[i];
      }
    });
  }
  return out;
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record(out, {x}, [](auto g, auto gin) {
      for (auto& v : *gin[0]) v += g[0];
    });
  }
  return out;
}

inline Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim = false) {
  if (axis >= x.rank()) throw DimensionError("mean_axis: axis out of range");
  Shape shape = x.shape();
  const std::size_t n = shape[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= shape[k];
  for (std::size_t k = axis + 1; k < shape.size(); ++k) inner *= shape[k];
  if (keepdim) shape[axis] = 1;
  else shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Buffer y(outer * inner, 0.0);
  auto xv = x.data();
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t a = 0; a < n; ++a) {
      const double* src = xv.data() + (o * n + a) * inner;
      double* dst = y.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  for (auto& v : y) v *= inv;
  Tensor out(std::move(shape), std::move(y));
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record(out, {x}, [outer, n, inner, inv](auto g, auto gin) {
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t a = 0; a < n; ++a) {
          double* dst = gin[0]->data() + (o * n + a) * inner;
          const double* src = g.data() + o * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * inv;
        }
      }
    });
  }
  return out;
}

/// Rows of a (V, d) table selected by `indices`. Rows equal to
/// `frozen_row` (the padding/unknown row) receive no gradient.
inline Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices,
                          std::optional<std::size_t> frozen_row = std::nullopt) {
  if (table.rank() != 2) throw DimensionError("gather_rows expects a (V, d) table");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  Buffer y(indices.size() * d);
  auto tv = table.data();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= vocab) {
      throw EncodingError("index " + std::to_string(indices[r]) + " outside vocabulary of size " +
                          std::to_string(vocab));
    }
    std::copy_n(tv.data() + indices[r] * d, d, y.data() + r * d);
  }
  Tensor out({indices.size(), d}, std::move(y));
  if (Tape* tape = detail::recording_tape({&table})) {
    tape->record(out, {table},
                 [idx = std::vector<std::size_t>(indices.begin(), indices.end()), d, frozen_row](auto g, auto gin) {
                   for (std::size_t r = 0; r < idx.size(); ++r) {
                     if (frozen_row && idx[r] == *frozen_row) continue;
                     double* dst = gin[0]->data() + idx[r] * d;
                     for (std::size_t i = 0; i < d; ++i) dst[i] += g[r * d + i];
                   }
                 });
  }
  return out;
}

/// Sum over entries of -[y log p + (1-y) log(1-p)], log arguments clamped
/// below at `clamp` (clamped terms contribute no gradient).
inline Tensor binary_cross_entropy(const Tensor& probs, std::span<const double> labels,
                                   double clamp = 1e-12) {
  if (labels.size() != probs.size()) {
    throw DimensionError("binary_cross_entropy: " + std::to_string(probs.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  auto p = probs.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    loss -= labels[i] * std::log(std::max(p[i], clamp)) +
            (1.0 - labels[i]) * std::log(std::max(1.0 - p[i], clamp));
  }
  Tensor out = Tensor::scalar(loss);
  if (Tape* tape = detail::recording_tape({&probs})) {
    tape->record(out, {probs}, [probs, y = Buffer(labels.begin(), labels.end()), clamp](auto g,
                                                                                                     auto gin) {
      auto p = probs.data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        double d = 0.0;
        if (p[i] > clamp) d -= y[i] / p[i];
        if (1.0 - p[i] > clamp) d += (1.0 - y[i]) / (1.0 - p[i]);
        (*gin[0])[i] += g[0] * d;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient verification

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_coord = 0;
  std::size_t coordinates = 0;
};

/// Compares backward() against central differences (f(θ+h) - f(θ-h)) / 2h on
/// every coordinate of every parameter. Error per coordinate is
/// |analytic - numeric| / max(1, |numeric|). `f` must be deterministic.
inline FiniteDiffReport finite_diff_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                                          double h) {
  if (!(h >= 1e-7 && h <= 1e-4)) throw std::invalid_argument("finite_diff_check: h must lie in [1e-7, 1e-4]");
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = f();
  }
  if (!std::isfinite(loss.item())) throw NumericError("finite_diff_check: objective is not finite");
  const GradientMap grads = backward(loss, tape);

  auto evaluate = [&]() {
    NoGradScope no_grad;
    const double v = f().item();
    if (!std::isfinite(v)) throw NumericError("finite_diff_check: objective is not finite");
    return v;
  };

  FiniteDiffReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto analytic = grads.get(params[p]);
    auto values = params[p].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = evaluate();
      values[i] = saved - h;
      const double down = evaluate();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      ++report.coordinates;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = p;
        report.worst_coord = i;
      }
    }
  }
  return report;
}

}  // namespace trans2d::ad
