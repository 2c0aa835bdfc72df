#include "bmi/numerics/graph.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "bmi/error.hpp"

namespace bmi::numerics {

std::uint64_t next_parameter_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

// ---------------------------------------------------------------------------
// ParameterSet

Parameter& ParameterSet::add(std::string name, Tensor init) {
  if (contains(name)) throw UsageError("duplicate parameter name " + name);
  Parameter p;
  p.id = next_parameter_id();
  p.name = std::move(name);
  p.grad = Tensor(init.shape());
  p.value = std::move(init);
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter& ParameterSet::get(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw UsageError("unknown parameter " + name);
}

const Parameter& ParameterSet::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw UsageError("unknown parameter " + name);
}

bool ParameterSet::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const Parameter& p) { return p.name == name; });
}

std::vector<Parameter*> ParameterSet::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParameterSet::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  if (other.size() != size()) throw ShapeError("parameter set size mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& src = other.params_[i];
    auto& dst = params_[i];
    if (src.name != dst.name || src.value.shape() != dst.value.shape())
      throw ShapeError("parameter mismatch at " + dst.name);
    dst.value = src.value;
  }
}

std::vector<double> ParameterSet::flat_values() const {
  std::vector<double> out;
  out.reserve(scalar_count());
  for (const auto& p : params_)
    out.insert(out.end(), p.value.storage().begin(), p.value.storage().end());
  return out;
}

std::vector<double> ParameterSet::flat_grads() const {
  std::vector<double> out;
  out.reserve(scalar_count());
  for (const auto& p : params_)
    out.insert(out.end(), p.grad.storage().begin(), p.grad.storage().end());
  return out;
}

void ParameterSet::scale_grads(double factor) {
  for (auto& p : params_)
    for (auto& g : p.grad.storage()) g *= factor;
}

// ---------------------------------------------------------------------------
// Graph

namespace {

enum class Op {
  Input, Param, Constant,
  MatMul, Add, Sub, Mul, AddRow, Scale, AddScalar,
  Tanh, Sigmoid, Softplus, Exp, Log, Abs,
  MaxAxis, MaxOf, Concat, Slice, GatherRows, Transpose, Reshape,
  LogSoftmax, SoftmaxXent, Mean, Sum,
};

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Param: return "parameter";
    case Op::Constant: return "constant";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::AddRow: return "add_row";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Softplus: return "softplus";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Abs: return "abs";
    case Op::MaxAxis: return "max_over_axis";
    case Op::MaxOf: return "max_of";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::GatherRows: return "gather_rows";
    case Op::Transpose: return "transpose";
    case Op::Reshape: return "reshape";
    case Op::LogSoftmax: return "log_softmax";
    case Op::SoftmaxXent: return "softmax_cross_entropy";
    case Op::Mean: return "mean";
    case Op::Sum: return "sum";
  }
  return "?";
}

std::size_t rows_of(const Shape& s) { return s.size() == 2 ? s[0] : 1; }
std::size_t cols_of(const Shape& s) { return s.back(); }

}  // namespace

struct Graph::Node {
  Op op = Op::Constant;
  std::vector<std::size_t> in;
  Shape shape{1};
  Tensor value;
  Tensor grad;
  double c = 0.0;
  std::size_t axis = 0, begin = 0, end = 0;
  std::vector<std::size_t> idx;  // gather rows / targets / argmax
  Parameter* param = nullptr;
  std::string name;
  bool bound = false;
};

Graph::Graph() = default;
Graph::~Graph() = default;
Graph::Graph(Graph&&) noexcept = default;
Graph& Graph::operator=(Graph&&) noexcept = default;

Var Graph::push(std::unique_ptr<Node> n) {
  nodes_.push_back(std::move(n));
  backward_ready_ = false;
  return Var{nodes_.size() - 1};
}

Graph::Node& Graph::node(Var v) {
  if (v.index >= nodes_.size()) throw UsageError("variable does not belong to graph");
  return *nodes_[v.index];
}

const Graph::Node& Graph::node(Var v) const {
  if (v.index >= nodes_.size()) throw UsageError("variable does not belong to graph");
  return *nodes_[v.index];
}

const Tensor& Graph::val(std::size_t i) const {
  const Node& n = *nodes_[i];
  return n.op == Op::Param ? n.param->value : n.value;
}

std::size_t Graph::node_count() const { return nodes_.size(); }

const Shape& Graph::shape(Var v) const { return node(v).shape; }

Var Graph::input(Shape shape, std::string name) {
  auto n = std::make_unique<Node>();
  n->op = Op::Input;
  n->shape = shape;
  n->value = Tensor(shape);
  n->name = std::move(name);
  return push(std::move(n));
}

Var Graph::parameter(Parameter& p) {
  auto n = std::make_unique<Node>();
  n->op = Op::Param;
  n->shape = p.value.shape();
  n->param = &p;
  n->name = p.name;
  return push(std::move(n));
}

Var Graph::constant(Tensor t) {
  auto n = std::make_unique<Node>();
  n->op = Op::Constant;
  n->shape = t.shape();
  n->value = std::move(t);
  return push(std::move(n));
}

Var Graph::matmul(Var a, Var b) {
  const Shape& sa = node(a).shape;
  const Shape& sb = node(b).shape;
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    throw ShapeError("matmul " + shape_string(sa) + " x " + shape_string(sb));
  auto n = std::make_unique<Node>();
  n->op = Op::MatMul;
  n->in = {a.index, b.index};
  n->shape = {sa[0], sb[1]};
  return push(std::move(n));
}

namespace {
Shape broadcast_shape(const Shape& a, const Shape& b, const char* what) {
  if (a == b) return a;
  if (shape_size(b) == 1) return a;
  if (shape_size(a) == 1) return b;
  throw ShapeError(std::string(what) + " " + shape_string(a) + " vs " +
                   shape_string(b));
}
}  // namespace

#define BMI_BINARY(fn, OP)                                                  \
  Var Graph::fn(Var a, Var b) {                                             \
    Shape s = broadcast_shape(node(a).shape, node(b).shape, op_name(OP));   \
    auto n = std::make_unique<Node>();                                      \
    n->op = OP;                                                             \
    n->in = {a.index, b.index};                                             \
    n->shape = std::move(s);                                                \
    return push(std::move(n));                                              \
  }
BMI_BINARY(add, Op::Add)
BMI_BINARY(sub, Op::Sub)
BMI_BINARY(mul, Op::Mul)
#undef BMI_BINARY

Var Graph::add_row(Var a, Var row) {
  const Shape& sa = node(a).shape;
  const Shape& sr = node(row).shape;
  if (sa.size() != 2 || shape_size(sr) != sa[1] || rows_of(sr) != 1)
    throw ShapeError("add_row " + shape_string(sa) + " + " + shape_string(sr));
  auto n = std::make_unique<Node>();
  n->op = Op::AddRow;
  n->in = {a.index, row.index};
  n->shape = sa;
  return push(std::move(n));
}

#define BMI_UNARY(fn, OP)                  \
  Var Graph::fn(Var a) {                   \
    auto n = std::make_unique<Node>();     \
    n->op = OP;                            \
    n->in = {a.index};                     \
    n->shape = node(a).shape;              \
    return push(std::move(n));             \
  }
BMI_UNARY(tanh, Op::Tanh)
BMI_UNARY(sigmoid, Op::Sigmoid)
BMI_UNARY(softplus, Op::Softplus)
BMI_UNARY(exp, Op::Exp)
BMI_UNARY(log, Op::Log)
BMI_UNARY(abs, Op::Abs)
BMI_UNARY(log_softmax, Op::LogSoftmax)
#undef BMI_UNARY

Var Graph::scale(Var a, double c) {
  auto n = std::make_unique<Node>();
  n->op = Op::Scale;
  n->in = {a.index};
  n->shape = node(a).shape;
  n->c = c;
  return push(std::move(n));
}

Var Graph::add_scalar(Var a, double c) {
  auto n = std::make_unique<Node>();
  n->op = Op::AddScalar;
  n->in = {a.index};
  n->shape = node(a).shape;
  n->c = c;
  return push(std::move(n));
}

Var Graph::max_over_axis(Var a, std::size_t axis) {
  const Shape& s = node(a).shape;
  if (s.size() != 2 || axis > 1)
    throw ShapeError("max_over_axis needs a rank-2 tensor and axis 0 or 1");
  auto n = std::make_unique<Node>();
  n->op = Op::MaxAxis;
  n->in = {a.index};
  n->axis = axis;
  n->shape = axis == 0 ? Shape{1, s[1]} : Shape{s[0], 1};
  return push(std::move(n));
}

Var Graph::max_of(const std::vector<Var>& xs) {
  if (xs.empty()) throw UsageError("max_of of nothing");
  auto n = std::make_unique<Node>();
  n->op = Op::MaxOf;
  n->shape = node(xs[0]).shape;
  for (auto v : xs) {
    if (node(v).shape != n->shape) throw ShapeError("max_of shape mismatch");
    n->in.push_back(v.index);
  }
  return push(std::move(n));
}

Var Graph::concat(const std::vector<Var>& xs, std::size_t axis) {
  if (xs.empty()) throw UsageError("concat of nothing");
  const Shape first = node(xs[0]).shape;
  auto n = std::make_unique<Node>();
  n->op = Op::Concat;
  n->axis = axis;
  if (first.size() == 1) {
    if (axis != 0) throw ShapeError("concat axis out of range for rank 1");
    std::size_t total = 0;
    for (auto v : xs) {
      if (node(v).shape.size() != 1) throw ShapeError("concat rank mismatch");
      total += node(v).shape[0];
      n->in.push_back(v.index);
    }
    n->shape = {total};
  } else {
    if (axis > 1) throw ShapeError("concat axis out of range");
    std::size_t total = 0;
    for (auto v : xs) {
      const Shape& s = node(v).shape;
      if (s.size() != 2 || s[1 - axis] != first[1 - axis])
        throw ShapeError("concat shape mismatch " + shape_string(s) + " vs " +
                         shape_string(first));
      total += s[axis];
      n->in.push_back(v.index);
    }
    n->shape = axis == 0 ? Shape{total, first[1]} : Shape{first[0], total};
  }
  return push(std::move(n));
}

Var Graph::slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = node(a).shape;
  if (axis >= s.size() || begin >= end || end > s[axis])
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " of " + shape_string(s));
  auto n = std::make_unique<Node>();
  n->op = Op::Slice;
  n->in = {a.index};
  n->axis = axis;
  n->begin = begin;
  n->end = end;
  n->shape = s;
  n->shape[axis] = end - begin;
  return push(std::move(n));
}

Var Graph::gather_rows(Var a, std::vector<std::size_t> rows) {
  const Shape& s = node(a).shape;
  if (s.size() != 2 || rows.empty()) throw ShapeError("gather_rows needs rank 2");
  for (auto r : rows)
    if (r >= s[0]) throw ShapeError("gather_rows index out of range");
  auto n = std::make_unique<Node>();
  n->op = Op::GatherRows;
  n->in = {a.index};
  n->shape = {rows.size(), s[1]};
  n->idx = std::move(rows);
  return push(std::move(n));
}

Var Graph::transpose(Var a) {
  const Shape& s = node(a).shape;
  if (s.size() != 2) throw ShapeError("transpose needs rank 2");
  auto n = std::make_unique<Node>();
  n->op = Op::Transpose;
  n->in = {a.index};
  n->shape = {s[1], s[0]};
  return push(std::move(n));
}

Var Graph::reshape(Var a, Shape shape) {
  if (shape_size(shape) != shape_size(node(a).shape))
    throw ShapeError("reshape size mismatch");
  auto n = std::make_unique<Node>();
  n->op = Op::Reshape;
  n->in = {a.index};
  n->shape = std::move(shape);
  return push(std::move(n));
}

Var Graph::softmax_cross_entropy(Var logits, std::vector<std::size_t> targets) {
  const Shape& s = node(logits).shape;
  const std::size_t m = rows_of(s), k = cols_of(s);
  if (targets.size() != m)
    throw ShapeError("softmax_cross_entropy needs one target per row");
  for (auto t : targets)
    if (t >= k) throw ShapeError("target class out of range");
  auto n = std::make_unique<Node>();
  n->op = Op::SoftmaxXent;
  n->in = {logits.index};
  n->shape = {m};
  n->idx = std::move(targets);
  return push(std::move(n));
}

Var Graph::mean(Var a) {
  auto n = std::make_unique<Node>();
  n->op = Op::Mean;
  n->in = {a.index};
  n->shape = {1};
  return push(std::move(n));
}

Var Graph::sum(Var a) {
  auto n = std::make_unique<Node>();
  n->op = Op::Sum;
  n->in = {a.index};
  n->shape = {1};
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Evaluation

void Graph::forward(const Bindings& bindings) {
  for (auto& up : nodes_) {
    Node& n = *up;
    if (n.op != Op::Input) continue;
    auto it = bindings.find(n.name);
    if (it != bindings.end()) {
      if (it->second.shape() != n.shape)
        throw ShapeError("binding for '" + n.name + "' has shape " +
                         shape_string(it->second.shape()) + ", expected " +
                         shape_string(n.shape));
      require_finite(it->second, n.name.c_str());
      n.value = it->second;
      n.bound = true;
    }
  }
  evaluated_ = 0;
  backward_ready_ = false;
  ensure_evaluated(nodes_.size());
}

const Tensor& Graph::value(Var v) {
  node(v);
  ensure_evaluated(v.index + 1);
  return val(v.index);
}

void Graph::ensure_evaluated(std::size_t upto) {
  for (; evaluated_ < upto; ++evaluated_) evaluate(evaluated_);
}

void Graph::evaluate(std::size_t i) {
  Node& n = *nodes_[i];
  auto in = [&](std::size_t k) -> const Tensor& { return val(n.in[k]); };
  switch (n.op) {
    case Op::Input:
      if (!n.bound) throw UsageError("input '" + n.name + "' is unbound");
      return;
    case Op::Param:
      if (n.param->value.shape() != n.shape)
        throw ShapeError("parameter " + n.name + " changed shape");
      require_finite(n.param->value, n.name.c_str());
      return;
    case Op::Constant:
      require_finite(n.value, "constant");
      return;
    default:
      break;
  }
  Tensor out(n.shape);
  auto& o = out.storage();
  switch (n.op) {
    case Op::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t m = a.shape()[0], k = a.shape()[1], c = b.shape()[1];
      const double* A = a.storage().data();
      const double* B = b.storage().data();
      double* C = o.data();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[r * k + p];
          if (av == 0.0) continue;
          const double* brow = B + p * c;
          double* crow = C + r * c;
          for (std::size_t j = 0; j < c; ++j) crow[j] += av * brow[j];
        }
      break;
    }
    case Op::Add:
    case Op::Sub:
    case Op::Mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const bool sa = a.size() == 1 && o.size() != 1;
      const bool sb = b.size() == 1 && o.size() != 1;
      for (std::size_t j = 0; j < o.size(); ++j) {
        const double x = a[sa ? 0 : j], y = b[sb ? 0 : j];
        o[j] = n.op == Op::Add ? x + y : n.op == Op::Sub ? x - y : x * y;
      }
      break;
    }
    case Op::AddRow: {
      const Tensor& a = in(0);
      const Tensor& r = in(1);
      const std::size_t c = n.shape[1];
      for (std::size_t j = 0; j < o.size(); ++j) o[j] = a[j] + r[j % c];
      break;
    }
    case Op::Scale:
      for (std::size_t j = 0; j < o.size(); ++j) o[j] = n.c * in(0)[j];
      break;
    case Op::AddScalar:
      for (std::size_t j = 0; j < o.size(); ++j) o[j] = n.c + in(0)[j];
      break;
    case Op::Tanh:
      for (std::size_t j = 0; j < o.size(); ++j) o[j] = std::tanh(in(0)[j]);
      break;
    case Op::Sigmoid:
      for (std::size_t j = 0; j < o.size(); ++j) o[j] = numerics::sigmoid(in(0)[j]);
      break;
    case Op::Softplus:
      for (std::size_t j = 0; j < o.size(); ++j) o[j] = numerics::softplus(in(0)[j]);
      break;
    case Op::Exp:
      for (std::size_t j = 0; j < o.size(); ++j) o[j] = std::exp(in(0)[j]);
      break;
    case Op::Log:
      for (std::size_t j = 0; j < o.size(); ++j) o[j] = std::log(in(0)[j]);
      break;
    case Op::Abs:
      for (std::size_t j = 0; j < o.size(); ++j) o[j] = std::abs(in(0)[j]);
      break;
    case Op::MaxAxis: {
      const Tensor& a = in(0);
      const std::size_t m = a.shape()[0], c = a.shape()[1];
      if (n.axis == 0) {
        n.idx.assign(c, 0);
        for (std::size_t j = 0; j < c; ++j) {
          std::size_t best = 0;
          for (std::size_t r = 1; r < m; ++r)
            if (a[r * c + j] > a[best * c + j]) best = r;
          n.idx[j] = best;
          o[j] = a[best * c + j];
        }
      } else {
        n.idx.assign(m, 0);
        for (std::size_t r = 0; r < m; ++r) {
          std::size_t best = 0;
          for (std::size_t j = 1; j < c; ++j)
            if (a[r * c + j] > a[r * c + best]) best = j;
          n.idx[r] = best;
          o[r] = a[r * c + best];
        }
      }
      break;
    }
    case Op::MaxOf: {
      n.idx.assign(o.size(), 0);
      for (std::size_t j = 0; j < o.size(); ++j) {
        std::size_t best = 0;
        double bv = in(0)[j];
        for (std::size_t k = 1; k < n.in.size(); ++k) {
          const double v = in(k)[j];
          if (v > bv) {
            bv = v;
            best = k;
          }
        }
        n.idx[j] = best;
        o[j] = bv;
      }
      break;
    }
    case Op::Concat: {
      if (n.shape.size() == 1 || n.axis == 0) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < n.in.size(); ++k) {
          const auto& s = in(k).storage();
          std::copy(s.begin(), s.end(), o.begin() + static_cast<std::ptrdiff_t>(off));
          off += s.size();
        }
      } else {
        const std::size_t m = n.shape[0], total = n.shape[1];
        std::size_t off = 0;
        for (std::size_t k = 0; k < n.in.size(); ++k) {
          const Tensor& t = in(k);
          const std::size_t c = t.shape()[1];
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < c; ++j) o[r * total + off + j] = t[r * c + j];
          off += c;
        }
      }
      break;
    }
    case Op::Slice: {
      const Tensor& a = in(0);
      if (a.rank() == 1) {
        for (std::size_t j = n.begin; j < n.end; ++j) o[j - n.begin] = a[j];
      } else {
        const std::size_t c = a.shape()[1], oc = n.shape[1];
        for (std::size_t r = 0; r < n.shape[0]; ++r)
          for (std::size_t j = 0; j < oc; ++j) {
            const std::size_t sr = n.axis == 0 ? r + n.begin : r;
            const std::size_t sc = n.axis == 1 ? j + n.begin : j;
            o[r * oc + j] = a[sr * c + sc];
          }
      }
      break;
    }
    case Op::GatherRows: {
      const Tensor& a = in(0);
      const std::size_t c = n.shape[1];
      for (std::size_t r = 0; r < n.idx.size(); ++r)
        std::copy_n(a.storage().begin() + static_cast<std::ptrdiff_t>(n.idx[r] * c), c,
                    o.begin() + static_cast<std::ptrdiff_t>(r * c));
      break;
    }
    case Op::Transpose: {
      const Tensor& a = in(0);
      const std::size_t m = a.shape()[0], c = a.shape()[1];
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < c; ++j) o[j * m + r] = a[r * c + j];
      break;
    }
    case Op::Reshape:
      o = in(0).storage();
      break;
    case Op::LogSoftmax: {
      const Tensor& a = in(0);
      const std::size_t m = rows_of(n.shape), k = cols_of(n.shape);
      for (std::size_t r = 0; r < m; ++r) {
        std::span<const double> row(a.storage().data() + r * k, k);
        const double lse = log_sum_exp(row);
        for (std::size_t j = 0; j < k; ++j) o[r * k + j] = row[j] - lse;
      }
      break;
    }
    case Op::SoftmaxXent: {
      const Tensor& a = in(0);
      const std::size_t k = cols_of(a.shape());
      for (std::size_t r = 0; r < n.idx.size(); ++r) {
        std::span<const double> row(a.storage().data() + r * k, k);
        o[r] = log_sum_exp(row) - row[n.idx[r]];
      }
      break;
    }
    case Op::Mean:
    case Op::Sum: {
      double s = 0.0;
      for (double v : in(0).storage()) s += v;
      o[0] = n.op == Op::Mean ? s / static_cast<double>(in(0).size()) : s;
      break;
    }
    default:
      break;
  }
  if (!out.all_finite())
    throw InvalidValueError(std::string("non-finite result from ") + op_name(n.op));
  n.value = std::move(out);
}

// ---------------------------------------------------------------------------
// Reverse pass

void Graph::backward(Var output) {
  if (shape_size(node(output).shape) != 1)
    throw UsageError("backward without seed needs a scalar output");
  backward(output, Tensor(node(output).shape, 1.0));
}

void Graph::backward(Var output, const Tensor& seed) {
  node(output);
  if (evaluated_ <= output.index)
    throw UsageError("backward called before forward evaluated the output");
  if (seed.shape() != node(output).shape)
    throw ShapeError("backward seed shape " + shape_string(seed.shape()) +
                     " does not match output " + shape_string(node(output).shape));
  for (std::size_t i = 0; i <= output.index; ++i) nodes_[i]->grad = Tensor(nodes_[i]->shape);
  nodes_[output.index]->grad = seed;
  for (std::size_t i = output.index + 1; i-- > 0;) propagate(i);
  backward_ready_ = true;
}

const Tensor& Graph::grad(Var v) const {
  if (!backward_ready_) throw UsageError("no backward pass has been run");
  return node(v).grad;
}

void Graph::propagate(std::size_t i) {
  Node& n = *nodes_[i];
  const Tensor& g = n.grad;
  const auto& gs = g.storage();
  auto gin = [&](std::size_t k) -> std::vector<double>& {
    return nodes_[n.in[k]]->grad.storage();
  };
  auto in = [&](std::size_t k) -> const Tensor& { return val(n.in[k]); };
  switch (n.op) {
    case Op::Input:
    case Op::Constant:
      return;
    case Op::Param: {
      auto& pg = n.param->grad.storage();
      for (std::size_t j = 0; j < pg.size(); ++j) pg[j] += gs[j];
      return;
    }
    case Op::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t m = a.shape()[0], k = a.shape()[1], c = b.shape()[1];
      auto& ga = gin(0);
      auto& gb = gin(1);
      const double* A = a.storage().data();
      const double* B = b.storage().data();
      for (std::size_t r = 0; r < m; ++r) {
        const double* grow = gs.data() + r * c;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B + p * c;
          double acc = 0.0;
          for (std::size_t j = 0; j < c; ++j) acc += grow[j] * brow[j];
          ga[r * k + p] += acc;
          const double av = A[r * k + p];
          if (av == 0.0) continue;
          double* gbrow = gb.data() + p * c;
          for (std::size_t j = 0; j < c; ++j) gbrow[j] += av * grow[j];
        }
      }
      return;
    }
    case Op::Add:
    case Op::Sub:
    case Op::Mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const bool sa = a.size() == 1 && gs.size() != 1;
      const bool sb = b.size() == 1 && gs.size() != 1;
      auto& ga = gin(0);
      auto& gb = gin(1);
      for (std::size_t j = 0; j < gs.size(); ++j) {
        const std::size_t ja = sa ? 0 : j, jb = sb ? 0 : j;
        if (n.op == Op::Add) {
          ga[ja] += gs[j];
          gb[jb] += gs[j];
        } else if (n.op == Op::Sub) {
          ga[ja] += gs[j];
          gb[jb] -= gs[j];
        } else {
          ga[ja] += gs[j] * b[jb];
          gb[jb] += gs[j] * a[ja];
        }
      }
      return;
    }
    case Op::AddRow: {
      auto& ga = gin(0);
      auto& gr = gin(1);
      const std::size_t c = n.shape[1];
      for (std::size_t j = 0; j < gs.size(); ++j) {
        ga[j] += gs[j];
        gr[j % c] += gs[j];
      }
      return;
    }
    case Op::Scale: {
      auto& ga = gin(0);
      for (std::size_t j = 0; j < gs.size(); ++j) ga[j] += n.c * gs[j];
      return;
    }
    case Op::AddScalar:
    case Op::Reshape: {
      auto& ga = gin(0);
      for (std::size_t j = 0; j < gs.size(); ++j) ga[j] += gs[j];
      return;
    }
    case Op::Tanh: {
      auto& ga = gin(0);
      for (std::size_t j = 0; j < gs.size(); ++j) {
        const double y = n.value[j];
        ga[j] += gs[j] * (1.0 - y * y);
      }
      return;
    }
    case Op::Sigmoid: {
      auto& ga = gin(0);
      for (std::size_t j = 0; j < gs.size(); ++j) {
        const double y = n.value[j];
        ga[j] += gs[j] * y * (1.0 - y);
      }
      return;
    }
    case Op::Softplus: {
      auto& ga = gin(0);
      const Tensor& x = in(0);
      for (std::size_t j = 0; j < gs.size(); ++j) ga[j] += gs[j] * numerics::sigmoid(x[j]);
      return;
    }
    case Op::Exp: {
      auto& ga = gin(0);
      for (std::size_t j = 0; j < gs.size(); ++j) ga[j] += gs[j] * n.value[j];
      return;
    }
    case Op::Log: {
      auto& ga = gin(0);
      const Tensor& x = in(0);
      for (std::size_t j = 0; j < gs.size(); ++j) ga[j] += gs[j] / x[j];
      return;
    }
    case Op::Abs: {
      auto& ga = gin(0);
      const Tensor& x = in(0);
      for (std::size_t j = 0; j < gs.size(); ++j)
        ga[j] += gs[j] * (x[j] > 0 ? 1.0 : x[j] < 0 ? -1.0 : 0.0);
      return;
    }
    case Op::MaxAxis: {
      auto& ga = gin(0);
      const std::size_t c = in(0).shape()[1];
      if (n.axis == 0) {
        for (std::size_t j = 0; j < c; ++j) ga[n.idx[j] * c + j] += gs[j];
      } else {
        for (std::size_t r = 0; r < n.idx.size(); ++r) ga[r * c + n.idx[r]] += gs[r];
      }
      return;
    }
    case Op::MaxOf: {
      for (std::size_t j = 0; j < gs.size(); ++j) gin(n.idx[j])[j] += gs[j];
      return;
    }
    case Op::Concat: {
      if (n.shape.size() == 1 || n.axis == 0) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < n.in.size(); ++k) {
          auto& gk = gin(k);
          for (std::size_t j = 0; j < gk.size(); ++j) gk[j] += gs[off + j];
          off += gk.size();
        }
      } else {
        const std::size_t m = n.shape[0], total = n.shape[1];
        std::size_t off = 0;
        for (std::size_t k = 0; k < n.in.size(); ++k) {
          auto& gk = gin(k);
          const std::size_t c = in(k).shape()[1];
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < c; ++j) gk[r * c + j] += gs[r * total + off + j];
          off += c;
        }
      }
      return;
    }
    case Op::Slice: {
      auto& ga = gin(0);
      const Tensor& a = in(0);
      if (a.rank() == 1) {
        for (std::size_t j = n.begin; j < n.end; ++j) ga[j] += gs[j - n.begin];
      } else {
        const std::size_t c = a.shape()[1], oc = n.shape[1];
        for (std::size_t r = 0; r < n.shape[0]; ++r)
          for (std::size_t j = 0; j < oc; ++j) {
            const std::size_t sr = n.axis == 0 ? r + n.begin : r;
            const std::size_t sc = n.axis == 1 ? j + n.begin : j;
            ga[sr * c + sc] += gs[r * oc + j];
          }
      }
      return;
    }
    case Op::GatherRows: {
      auto& ga = gin(0);
      const std::size_t c = n.shape[1];
      for (std::size_t r = 0; r < n.idx.size(); ++r)
        for (std::size_t j = 0; j < c; ++j) ga[n.idx[r] * c + j] += gs[r * c + j];
      return;
    }
    case Op::Transpose: {
      auto& ga = gin(0);
      const std::size_t m = n.shape[1], c = n.shape[0];
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += gs[j * m + r];
      return;
    }
    case Op::LogSoftmax: {
      auto& ga = gin(0);
      const std::size_t m = rows_of(n.shape), k = cols_of(n.shape);
      for (std::size_t r = 0; r < m; ++r) {
        double gsum = 0.0;
        for (std::size_t j = 0; j < k; ++j) gsum += gs[r * k + j];
        for (std::size_t j = 0; j < k; ++j)
          ga[r * k + j] += gs[r * k + j] - std::exp(n.value[r * k + j]) * gsum;
      }
      return;
    }
    case Op::SoftmaxXent: {
      auto& ga = gin(0);
      const Tensor& a = in(0);
      const std::size_t k = cols_of(a.shape());
      for (std::size_t r = 0; r < n.idx.size(); ++r) {
        std::span<const double> row(a.storage().data() + r * k, k);
        const double lse = log_sum_exp(row);
        for (std::size_t j = 0; j < k; ++j) {
          const double p = std::exp(row[j] - lse);
          ga[r * k + j] += gs[r] * (p - (j == n.idx[r] ? 1.0 : 0.0));
        }
      }
      return;
    }
    case Op::Mean:
    case Op::Sum: {
      auto& ga = gin(0);
      const double s = n.op == Op::Mean ? gs[0] / static_cast<double>(ga.size()) : gs[0];
      for (auto& v : ga) v += s;
      return;
    }
  }
}

std::vector<Parameter*> Graph::parameters() const {
  std::vector<Parameter*> out;
  for (const auto& n : nodes_)
    if (n->op == Op::Param &&
        std::find(out.begin(), out.end(), n->param) == out.end())
      out.push_back(n->param);
  return out;
}

std::vector<Var> Graph::inputs() const {
  std::vector<Var> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i]->op == Op::Input) out.push_back(Var{i});
  return out;
}

const std::string& Graph::input_name(Var v) const { return node(v).name; }

}  // namespace bmi::numerics
