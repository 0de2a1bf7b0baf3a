#include "conml/autodiff/tape.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>
#include <string>

namespace conml {
namespace {

constexpr double kSqrtFloor = 1e-12;

void check_scalar_output(const Tape* tape, Var output) {
  if (output.tape() != tape) {
    throw std::invalid_argument("gradient: output lives on a different tape");
  }
  if (output.value().numel() != 1) {
    throw ShapeError("gradient: output must be scalar, got shape " + output.shape().str());
  }
}

}  // namespace

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kNeg: return "neg";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSquare: return "square";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kSumTo: return "sum_to";
    case OpKind::kBroadcastTo: return "broadcast_to";
    case OpKind::kReshape: return "reshape";
    case OpKind::kConcat: return "concat";
    case OpKind::kColumns: return "columns";
  }
  return "?";
}

Var Tape::variable(Tensor value) {
  bytes_ += static_cast<std::size_t>(value.numel()) * sizeof(double);
  nodes_.push_back(Node{OpKind::kLeaf, true, 0, 0, 0.0, 0, std::move(value)});
  return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  bytes_ += static_cast<std::size_t>(value.numel()) * sizeof(double);
  nodes_.push_back(Node{OpKind::kLeaf, false, 0, 0, 0.0, 0, std::move(value)});
  return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

std::span<const std::int32_t> Tape::parents(std::int32_t i) const {
  const Node& n = node(i);
  return {parent_pool_.data() + n.parent_begin, static_cast<std::size_t>(n.parent_count)};
}

Var Tape::record(OpKind op, Tensor value, std::initializer_list<Var> parents, double scalar,
                 Index aux) {
  return record(op, std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                scalar, aux);
}

Var Tape::record(OpKind op, Tensor value, std::span<const Var> parents, double scalar,
                 Index aux) {
  bool requires_grad = false;
  const auto begin = static_cast<std::int32_t>(parent_pool_.size());
  for (const Var& p : parents) {
    parent_pool_.push_back(p.index());
    requires_grad = requires_grad || node(p.index()).requires_grad;
  }
  bytes_ += static_cast<std::size_t>(value.numel()) * sizeof(double);
  nodes_.push_back(Node{op, requires_grad, begin, static_cast<std::int32_t>(parents.size()),
                        scalar, aux, std::move(value)});
  return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

std::vector<Tensor> Tape::gradient(Var output, std::span<const Var> wrt) const {
  check_scalar_output(this, output);
  const std::int32_t last = output.index();
  std::vector<Matrix> adj(static_cast<std::size_t>(last) + 1);
  std::vector<char> has(static_cast<std::size_t>(last) + 1, 0);
  std::vector<char> keep(static_cast<std::size_t>(last) + 1, 0);
  for (const Var& w : wrt) {
    if (w.tape() != this) throw std::invalid_argument("gradient: wrt Var on a different tape");
    if (w.index() <= last) keep[w.index()] = 1;
  }
  adj[last] = Matrix::Ones(1, 1);
  has[last] = 1;

  auto accumulate = [&](std::int32_t p, const auto& contribution) {
    if (!nodes_[p].requires_grad) return;
    if (has[p]) {
      adj[p] += contribution;
    } else {
      adj[p] = contribution;
      has[p] = 1;
    }
  };

  // Nothing below the lowest wrt node can reach a wrt adjoint.
  std::int32_t stop = last + 1;
  for (const Var& w : wrt) stop = std::min(stop, w.index());
  for (std::int32_t i = last; i > stop; --i) {
    if (!has[i]) continue;
    const Node& n = nodes_[i];
    if (n.op == OpKind::kLeaf || !n.requires_grad) continue;
    const Matrix& g = adj[i];
    const auto ps = parents(i);
    const Matrix& out = n.value.values();
    const Matrix& a = nodes_[ps[0]].value.values();

    switch (n.op) {
      case OpKind::kLeaf: break;
      case OpKind::kAdd:
        accumulate(ps[0], g);
        accumulate(ps[1], g);
        break;
      case OpKind::kSub:
        accumulate(ps[0], g);
        accumulate(ps[1], -g);
        break;
      case OpKind::kMul: {
        const Matrix& b = nodes_[ps[1]].value.values();
        accumulate(ps[0], g.cwiseProduct(b));
        accumulate(ps[1], g.cwiseProduct(a));
        break;
      }
      case OpKind::kDiv: {
        const Matrix& b = nodes_[ps[1]].value.values();
        accumulate(ps[0], g.cwiseQuotient(b));
        accumulate(ps[1], -(g.cwiseProduct(out)).cwiseQuotient(b));
        break;
      }
      case OpKind::kNeg: accumulate(ps[0], -g); break;
      case OpKind::kScale: accumulate(ps[0], n.scalar * g); break;
      case OpKind::kAddScalar: accumulate(ps[0], g); break;
      case OpKind::kMatmul: {
        const Matrix& b = nodes_[ps[1]].value.values();
        if (nodes_[ps[0]].requires_grad) accumulate(ps[0], Matrix(g * b.transpose()));
        if (nodes_[ps[1]].requires_grad) accumulate(ps[1], Matrix(a.transpose() * g));
        break;
      }
      case OpKind::kTranspose: accumulate(ps[0], g.transpose()); break;
      case OpKind::kRelu:
        accumulate(ps[0], g.cwiseProduct((a.array() > 0.0).cast<double>().matrix()));
        break;
      case OpKind::kSigmoid:
        accumulate(ps[0], (g.array() * out.array() * (1.0 - out.array())).matrix());
        break;
      case OpKind::kExp: accumulate(ps[0], g.cwiseProduct(out)); break;
      case OpKind::kLog: accumulate(ps[0], g.cwiseQuotient(a)); break;
      case OpKind::kSquare: accumulate(ps[0], 2.0 * g.cwiseProduct(a)); break;
      case OpKind::kSqrt:
        accumulate(ps[0], (g.array() / (2.0 * out.array().max(kSqrtFloor))).matrix());
        break;
      case OpKind::kSum:
        accumulate(ps[0], Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
        break;
      case OpKind::kMean:
        accumulate(ps[0], Matrix::Constant(a.rows(), a.cols(),
                                           g(0, 0) / static_cast<double>(a.size())));
        break;
      case OpKind::kSumTo:
        if (n.value.shape().rank() == 0) {
          accumulate(ps[0], Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
        } else {
          accumulate(ps[0], g.replicate(a.rows(), 1));
        }
        break;
      case OpKind::kBroadcastTo: {
        if (nodes_[ps[0]].value.shape().rank() == 0) {
          accumulate(ps[0], Matrix::Constant(1, 1, sum_in_order(g)));
        } else {
          Matrix r = Matrix::Zero(1, g.cols());
          for (Index row = 0; row < g.rows(); ++row) r.row(0) += g.row(row);
          accumulate(ps[0], r);
        }
        break;
      }
      case OpKind::kReshape:
        accumulate(ps[0], Eigen::Map<const Matrix>(g.data(), a.rows(), a.cols()));
        break;
      case OpKind::kConcat: {
        Index offset = 0;
        for (std::int32_t p : ps) {
          const Matrix& v = nodes_[p].value.values();
          if (n.aux == 1) {
            accumulate(p, g.middleCols(offset, v.cols()));
            offset += v.cols();
          } else {
            accumulate(p, g.middleRows(offset, v.rows()));
            offset += v.rows();
          }
        }
        break;
      }
      case OpKind::kColumns: {
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        full.middleCols(n.aux, g.cols()) = g;
        accumulate(ps[0], full);
        break;
      }
    }
    if (!keep[i]) adj[i] = Matrix();
  }

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    const std::int32_t k = w.index();
    if (k <= last && has[k]) {
      result.emplace_back(w.shape(), adj[k]);
    } else {
      result.push_back(Tensor::zeros(w.shape()));
    }
  }
  return result;
}

std::vector<Var> Tape::gradient_graph(Var output, std::span<const Var> wrt) {
  check_scalar_output(this, output);
  const std::int32_t last = output.index();
  std::vector<Var> adj(static_cast<std::size_t>(last) + 1);
  adj[last] = constant(Tensor::ones(output.shape()));

  auto accumulate = [&](std::int32_t p, Var contribution) {
    if (!nodes_[p].requires_grad) return;
    adj[p] = adj[p].valid() ? add(adj[p], contribution) : contribution;
  };

  std::int32_t stop = last + 1;
  for (const Var& w : wrt) stop = std::min(stop, w.index());
  std::vector<std::int32_t> ps;
  for (std::int32_t i = last; i > stop; --i) {
    if (!adj[i].valid()) continue;
    // Copy node metadata: recording below may reallocate the node storage.
    const OpKind op = nodes_[i].op;
    if (op == OpKind::kLeaf || !nodes_[i].requires_grad) continue;
    const double s = nodes_[i].scalar;
    const Index aux = nodes_[i].aux;
    const auto span = parents(i);
    ps.assign(span.begin(), span.end());
    const Var g = adj[i];
    const Var self = var(i);
    const Var a = var(ps[0]);
    auto needs = [&](std::size_t k) { return nodes_[ps[k]].requires_grad; };

    switch (op) {
      case OpKind::kLeaf: break;
      case OpKind::kAdd:
        accumulate(ps[0], g);
        accumulate(ps[1], g);
        break;
      case OpKind::kSub:
        accumulate(ps[0], g);
        if (needs(1)) accumulate(ps[1], neg(g));
        break;
      case OpKind::kMul:
        if (needs(0)) accumulate(ps[0], mul(g, var(ps[1])));
        if (needs(1)) accumulate(ps[1], mul(g, a));
        break;
      case OpKind::kDiv:
        if (needs(0)) accumulate(ps[0], div(g, var(ps[1])));
        if (needs(1)) accumulate(ps[1], neg(div(mul(g, self), var(ps[1]))));
        break;
      case OpKind::kNeg: accumulate(ps[0], neg(g)); break;
      case OpKind::kScale: accumulate(ps[0], scale(g, s)); break;
      case OpKind::kAddScalar: accumulate(ps[0], g); break;
      case OpKind::kMatmul:
        if (needs(0)) accumulate(ps[0], matmul(g, transpose(var(ps[1]))));
        if (needs(1)) accumulate(ps[1], matmul(transpose(a), g));
        break;
      case OpKind::kTranspose: accumulate(ps[0], transpose(g)); break;
      case OpKind::kRelu: {
        Matrix mask = (a.value().values().array() > 0.0).cast<double>().matrix();
        accumulate(ps[0], mul(g, constant(Tensor(a.shape(), std::move(mask)))));
        break;
      }
      case OpKind::kSigmoid: accumulate(ps[0], mul(g, mul(self, 1.0 - self))); break;
      case OpKind::kExp: accumulate(ps[0], mul(g, self)); break;
      case OpKind::kLog: accumulate(ps[0], div(g, a)); break;
      case OpKind::kSquare: accumulate(ps[0], scale(mul(g, a), 2.0)); break;
      case OpKind::kSqrt: {
        Var denom = self;
        const Matrix& v = self.value().values();
        if ((v.array() < kSqrtFloor).any()) {
          Matrix lift = (v.array().max(kSqrtFloor) - v.array()).matrix();
          denom = add(self, constant(Tensor(self.shape(), std::move(lift))));
        }
        accumulate(ps[0], div(g, scale(denom, 2.0)));
        break;
      }
      case OpKind::kSum: accumulate(ps[0], broadcast_to(reshape(g, Shape()), a.shape())); break;
      case OpKind::kMean:
        accumulate(ps[0], scale(broadcast_to(reshape(g, Shape()), a.shape()),
                                1.0 / static_cast<double>(a.value().numel())));
        break;
      case OpKind::kSumTo: accumulate(ps[0], broadcast_to(g, a.shape())); break;
      case OpKind::kBroadcastTo: accumulate(ps[0], sum_to(g, a.shape())); break;
      case OpKind::kReshape: accumulate(ps[0], reshape(g, a.shape())); break;
      case OpKind::kConcat: {
        Index offset = 0;
        for (std::int32_t p : ps) {
          const Shape ps_shape = nodes_[p].value.shape();
          if (aux == 1) {
            const Index c = ps_shape.cols();
            if (nodes_[p].requires_grad) accumulate(p, reshape(columns(g, offset, c), ps_shape));
            offset += c;
          } else {
            const Index r = ps_shape.rows();
            if (nodes_[p].requires_grad) {
              accumulate(p, transpose(columns(transpose(g), offset, r)));
            }
            offset += r;
          }
        }
        break;
      }
      case OpKind::kColumns: {
        const Shape& sa = a.shape();
        const Index total = sa.cols();
        const Index width = g.shape().cols();
        std::array<Var, 3> blocks;
        std::size_t nb = 0;
        auto zeros = [&](Index c) {
          return constant(Tensor::zeros(sa.rank() == 1 ? Shape::vector(c)
                                                       : Shape::matrix(sa.rows(), c)));
        };
        if (aux > 0) blocks[nb++] = zeros(aux);
        blocks[nb++] = g;
        if (aux + width < total) blocks[nb++] = zeros(total - aux - width);
        accumulate(ps[0], nb == 1 ? g : concat(std::span<const Var>(blocks.data(), nb),
                                               sa.rank() == 1 ? 0 : 1));
        break;
      }
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.tape() != this) throw std::invalid_argument("gradient: wrt Var on a different tape");
    const std::int32_t k = w.index();
    if (k <= last && adj[k].valid()) {
      result.push_back(adj[k]);
    } else {
      result.push_back(constant(Tensor::zeros(w.shape())));
    }
  }
  return result;
}

}  // namespace conml
