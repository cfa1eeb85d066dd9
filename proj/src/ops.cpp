#include "kavi/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>
#include <sstream>

namespace kavi {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw TensorError(msg);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    std::ostringstream os;
    os << op << ": shape mismatch " << shape_to_string(a.shape()) << " vs "
       << shape_to_string(b.shape());
    throw TensorError(os.str());
  }
}

using Node = std::shared_ptr<TensorNode>;
using Nodes = std::vector<Node>;

// Elementwise op with backward dx = g * dval(x_i, y_i).
template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const char* name, const Tensor& a, Fwd fwd, Bwd bwd) {
  std::vector<double> out(a.size());
  const auto& x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  return detail::make_op_result(
      name, {a}, a.shape(), std::move(out),
      [bwd](const Node& o, const Nodes& in) {
        return [bwd, o, in]() {
          if (!in[0]->requires_grad) return;
          const auto& g = o->grad_buffer();
          const auto& x = in[0]->data;
          const auto& y = o->data;
          auto& gx = in[0]->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * bwd(x[i], y[i]);
        };
      });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::make_op_result(
      "add", {a, b}, a.shape(), std::move(out),
      [](const Node& o, const Nodes& in) {
        return [o, in]() {
          const auto& g = o->grad_buffer();
          for (int side = 0; side < 2; ++side) {
            if (!in[side]->requires_grad) continue;
            auto& gx = in[side]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
          }
        };
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::make_op_result(
      "sub", {a, b}, a.shape(), std::move(out),
      [](const Node& o, const Nodes& in) {
        return [o, in]() {
          const auto& g = o->grad_buffer();
          if (in[0]->requires_grad) {
            auto& gx = in[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
          }
          if (in[1]->requires_grad) {
            auto& gx = in[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i];
          }
        };
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return detail::make_op_result(
      "mul", {a, b}, a.shape(), std::move(out),
      [](const Node& o, const Nodes& in) {
        return [o, in]() {
          const auto& g = o->grad_buffer();
          if (in[0]->requires_grad) {
            auto& gx = in[0]->grad_buffer();
            const auto& y = in[1]->data;
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
          }
          if (in[1]->requires_grad) {
            auto& gy = in[1]->grad_buffer();
            const auto& x = in[0]->data;
            for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * x[i];
          }
        };
      });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  require_same_shape("divide", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
  return detail::make_op_result(
      "divide", {a, b}, a.shape(), std::move(out),
      [](const Node& o, const Nodes& in) {
        return [o, in]() {
          const auto& g = o->grad_buffer();
          const auto& x = in[0]->data;
          const auto& y = in[1]->data;
          if (in[0]->requires_grad) {
            auto& gx = in[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / y[i];
          }
          if (in[1]->requires_grad) {
            auto& gy = in[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gy[i] -= g[i] * x[i] / (y[i] * y[i]);
          }
        };
      });
}

Tensor add(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + s;
  return detail::make_op_result(
      "add_scalar", {a}, a.shape(), std::move(out),
      [](const Node& o, const Nodes& in) {
        return [o, in]() {
          if (!in[0]->requires_grad) return;
          const auto& g = o->grad_buffer();
          auto& gx = in[0]->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        };
      });
}

Tensor mul(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return detail::make_op_result(
      "mul_scalar", {a}, a.shape(), std::move(out),
      [s](const Node& o, const Nodes& in) {
        return [s, o, in]() {
          if (!in[0]->requires_grad) return;
          const auto& g = o->grad_buffer();
          auto& gx = in[0]->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
        };
      });
}

Tensor neg(const Tensor& a) { return mul(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary_elementwise(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_elementwise(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary_elementwise(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor relu(const Tensor& a) {
  return unary_elementwise(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

namespace detail {

void mm_nn(const double* a, const double* b, double* c,
           std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void mm_tn(const double* a, const double* b, double* c,
           std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < m; ++p) {
    const double* arow = a + p * k;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < k; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void mm_nt(const double* a, const double* b, double* c,
           std::size_t m, std::size_t k, std::size_t n) {
  // The dot-product form serializes on one accumulator; transposing B once
  // and reusing the streaming kernel is several times faster.
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  mm_nn(a, bt.data(), c, m, n, k);
}

}  // namespace detail

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank-2");
  require(a.dim(1) == b.dim(0),
          "matmul: inner dimensions differ, " + shape_to_string(a.shape()) +
              " vs " + shape_to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  detail::mm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_op_result(
      "matmul", {a, b}, {m, n}, std::move(out),
      [m, k, n](const Node& o, const Nodes& in) {
        return [m, k, n, o, in]() {
          const auto& g = o->grad_buffer();
          if (in[0]->requires_grad) {
            auto& ga = in[0]->grad_buffer();
            detail::mm_nt(g.data(), in[1]->data.data(), ga.data(), m, k, n);
          }
          if (in[1]->requires_grad) {
            auto& gb = in[1]->grad_buffer();
            detail::mm_tn(in[0]->data.data(), g.data(), gb.data(), m, k, n);
          }
        };
      });
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose: operand must be rank-2");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  return detail::make_op_result(
      "transpose", {a}, {n, m}, std::move(out),
      [m, n](const Node& o, const Nodes& in) {
        return [m, n, o, in]() {
          if (!in[0]->requires_grad) return;
          const auto& g = o->grad_buffer();
          auto& gx = in[0]->grad_buffer();
          for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < m; ++i) gx[i * n + j] += g[j * m + i];
        };
      });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.size(),
          "reshape: element count mismatch, " + shape_to_string(a.shape()) +
              " to " + shape_to_string(shape));
  std::vector<double> out = a.data();
  return detail::make_op_result(
      "reshape", {a}, std::move(shape), std::move(out),
      [](const Node& o, const Nodes& in) {
        return [o, in]() {
          if (!in[0]->requires_grad) return;
          const auto& g = o->grad_buffer();
          auto& gx = in[0]->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        };
      });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  require(x.rank() == 2 && b.rank() == 1, "add_bias: expects (N x F) and (F)");
  require(x.dim(1) == b.dim(0),
          "add_bias: feature dimension mismatch, " + shape_to_string(x.shape()) +
              " vs " + shape_to_string(b.shape()));
  const std::size_t n = x.dim(0), f = x.dim(1);
  std::vector<double> out(n * f);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) out[i * f + j] = x.data()[i * f + j] + b.data()[j];
  return detail::make_op_result(
      "add_bias", {x, b}, x.shape(), std::move(out),
      [n, f](const Node& o, const Nodes& in) {
        return [n, f, o, in]() {
          const auto& g = o->grad_buffer();
          if (in[0]->requires_grad) {
            auto& gx = in[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
          }
          if (in[1]->requires_grad) {
            auto& gb = in[1]->grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < f; ++j) gb[j] += g[i * f + j];
          }
        };
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_bias(matmul(x, w), b);
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return detail::make_op_result(
      "sum", {a}, {}, {acc},
      [](const Node& o, const Nodes& in) {
        return [o, in]() {
          if (!in[0]->requires_grad) return;
          const double g = o->grad_buffer()[0];
          auto& gx = in[0]->grad_buffer();
          for (double& v : gx) v += g;
        };
      });
}

Tensor mean(const Tensor& a) {
  require(a.size() > 0, "mean: empty tensor");
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  const double inv = 1.0 / static_cast<double>(a.size());
  return detail::make_op_result(
      "mean", {a}, {}, {acc * inv},
      [inv](const Node& o, const Nodes& in) {
        return [inv, o, in]() {
          if (!in[0]->requires_grad) return;
          const double g = o->grad_buffer()[0] * inv;
          auto& gx = in[0]->grad_buffer();
          for (double& v : gx) v += g;
        };
      });
}

Tensor sum_axis(const Tensor& a, std::size_t axis) {
  require(a.rank() == 2, "sum_axis: operand must be rank-2");
  require(axis < 2, "sum_axis: axis out of range");
  const std::size_t n = a.dim(0), f = a.dim(1);
  if (axis == 0) {
    std::vector<double> out(f, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < f; ++j) out[j] += a.data()[i * f + j];
    return detail::make_op_result(
        "sum_axis0", {a}, {f}, std::move(out),
        [n, f](const Node& o, const Nodes& in) {
          return [n, f, o, in]() {
            if (!in[0]->requires_grad) return;
            const auto& g = o->grad_buffer();
            auto& gx = in[0]->grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < f; ++j) gx[i * f + j] += g[j];
          };
        });
  }
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) out[i] += a.data()[i * f + j];
  return detail::make_op_result(
      "sum_axis1", {a}, {n}, std::move(out),
      [n, f](const Node& o, const Nodes& in) {
        return [n, f, o, in]() {
          if (!in[0]->requires_grad) return;
          const auto& g = o->grad_buffer();
          auto& gx = in[0]->grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < f; ++j) gx[i * f + j] += g[i];
        };
      });
}

Tensor mean_axis(const Tensor& a, std::size_t axis) {
  require(a.rank() == 2, "mean_axis: operand must be rank-2");
  require(axis < 2, "mean_axis: axis out of range");
  const double inv = 1.0 / static_cast<double>(axis == 0 ? a.dim(0) : a.dim(1));
  return mul(sum_axis(a, axis), inv);
}

Tensor softmax_rows(const Tensor& logits) {
  require(logits.rank() == 2, "softmax_rows: operand must be rank-2");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  require(c > 0, "softmax_rows: empty rows");
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data().data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(row[j] - mx);
      z += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  return detail::make_op_result(
      "softmax_rows", {logits}, logits.shape(), std::move(out),
      [n, c](const Node& o, const Nodes& in) {
        return [n, c, o, in]() {
          if (!in[0]->requires_grad) return;
          const auto& g = o->grad_buffer();
          const auto& y = o->data;
          auto& gx = in[0]->grad_buffer();
          for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
              gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
          }
        };
      });
}

Tensor log_softmax_rows(const Tensor& logits) {
  require(logits.rank() == 2, "log_softmax_rows: operand must be rank-2");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  require(c > 0, "log_softmax_rows: empty rows");
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data().data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lz;
  }
  return detail::make_op_result(
      "log_softmax_rows", {logits}, logits.shape(), std::move(out),
      [n, c](const Node& o, const Nodes& in) {
        return [n, c, o, in]() {
          if (!in[0]->requires_grad) return;
          const auto& g = o->grad_buffer();
          const auto& y = o->data;
          auto& gx = in[0]->grad_buffer();
          for (std::size_t i = 0; i < n; ++i) {
            double gsum = 0.0;
            for (std::size_t j = 0; j < c; ++j) gsum += g[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
              gx[i * c + j] += g[i * c + j] - std::exp(y[i * c + j]) * gsum;
          }
        };
      });
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& indices) {
  require(a.rank() == 2, "gather_rows: operand must be rank-2");
  const std::size_t f = a.dim(1);
  for (std::size_t idx : indices)
    require(idx < a.dim(0), "gather_rows: row index out of range");
  std::vector<double> out(indices.size() * f);
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(a.data().data() + indices[r] * f, f, out.data() + r * f);
  auto idx = std::make_shared<std::vector<std::size_t>>(indices);
  return detail::make_op_result(
      "gather_rows", {a}, {indices.size(), f}, std::move(out),
      [idx, f](const Node& o, const Nodes& in) {
        return [idx, f, o, in]() {
          if (!in[0]->requires_grad) return;
          const auto& g = o->grad_buffer();
          auto& gx = in[0]->grad_buffer();
          for (std::size_t r = 0; r < idx->size(); ++r)
            for (std::size_t j = 0; j < f; ++j) gx[(*idx)[r] * f + j] += g[r * f + j];
        };
      });
}

Tensor pairwise_sqdist(const Tensor& x, const Tensor& y) {
  require(x.rank() == 2 && y.rank() == 2, "pairwise_sqdist: operands must be rank-2");
  require(x.dim(1) == y.dim(1),
          "pairwise_sqdist: feature dimension mismatch, " +
              shape_to_string(x.shape()) + " vs " + shape_to_string(y.shape()));
  const std::size_t m = x.dim(0), n = y.dim(0), d = x.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.data().data() + i * d;
    for (std::size_t j = 0; j < n; ++j) {
      const double* yj = y.data().data() + j * d;
      double acc = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = xi[t] - yj[t];
        acc += diff * diff;
      }
      out[i * n + j] = acc;
    }
  }
  return detail::make_op_result(
      "pairwise_sqdist", {x, y}, {m, n}, std::move(out),
      [m, n, d](const Node& o, const Nodes& in) {
        return [m, n, d, o, in]() {
          const auto& g = o->grad_buffer();
          const auto& xd = in[0]->data;
          const auto& yd = in[1]->data;
          if (in[0]->requires_grad) {
            auto& gx = in[0]->grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < n; ++j) {
                const double gij = 2.0 * g[i * n + j];
                if (gij == 0.0) continue;
                for (std::size_t t = 0; t < d; ++t)
                  gx[i * d + t] += gij * (xd[i * d + t] - yd[j * d + t]);
              }
          }
          if (in[1]->requires_grad) {
            auto& gy = in[1]->grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < n; ++j) {
                const double gij = 2.0 * g[i * n + j];
                if (gij == 0.0) continue;
                for (std::size_t t = 0; t < d; ++t)
                  gy[j * d + t] += gij * (yd[j * d + t] - xd[i * d + t]);
              }
          }
        };
      });
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b,
              std::size_t stride, std::size_t padding) {
  require(x.rank() == 3, "conv1d: input must be (N x Cin x L)");
  require(w.rank() == 3, "conv1d: kernels must be (Cout x Cin x K)");
  require(b.rank() == 1, "conv1d: bias must be rank-1");
  require(stride >= 1, "conv1d: stride must be at least 1");
  const std::size_t N = x.dim(0), ci = x.dim(1), L = x.dim(2);
  const std::size_t co = w.dim(0), K = w.dim(2);
  require(w.dim(1) == ci, "conv1d: channel mismatch between input and kernels");
  require(b.dim(0) == co, "conv1d: bias length must equal output channels");
  require(L + 2 * padding >= K, "conv1d: kernel wider than padded input");
  const std::size_t lo = (L + 2 * padding - K) / stride + 1;
  std::vector<double> out(N * co * lo);
  const auto& xd = x.data();
  const auto& wd = w.data();
  const auto& bd = b.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t oc = 0; oc < co; ++oc)
      for (std::size_t t = 0; t < lo; ++t) {
        double acc = bd[oc];
        for (std::size_t ic = 0; ic < ci; ++ic) {
          const double* xrow = xd.data() + (n * ci + ic) * L;
          const double* wrow = wd.data() + (oc * ci + ic) * K;
          for (std::size_t k = 0; k < K; ++k) {
            const std::size_t pos = t * stride + k;
            if (pos < padding || pos - padding >= L) continue;
            acc += xrow[pos - padding] * wrow[k];
          }
        }
        out[(n * co + oc) * lo + t] = acc;
      }
  return detail::make_op_result(
      "conv1d", {x, w, b}, {N, co, lo}, std::move(out),
      [N, ci, L, co, K, lo, stride, padding](const Node& o, const Nodes& in) {
        return [N, ci, L, co, K, lo, stride, padding, o, in]() {
          const auto& g = o->grad_buffer();
          const auto& xd = in[0]->data;
          const auto& wd = in[1]->data;
          const bool need_x = in[0]->requires_grad;
          const bool need_w = in[1]->requires_grad;
          const bool need_b = in[2]->requires_grad;
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t oc = 0; oc < co; ++oc) {
              const double* grow = g.data() + (n * co + oc) * lo;
              if (need_b) {
                double acc = 0.0;
                for (std::size_t t = 0; t < lo; ++t) acc += grow[t];
                in[2]->grad_buffer()[oc] += acc;
              }
              for (std::size_t ic = 0; ic < ci; ++ic) {
                const double* xrow = xd.data() + (n * ci + ic) * L;
                const double* wrow = wd.data() + (oc * ci + ic) * K;
                for (std::size_t t = 0; t < lo; ++t) {
                  const double gv = grow[t];
                  if (gv == 0.0) continue;
                  for (std::size_t k = 0; k < K; ++k) {
                    const std::size_t pos = t * stride + k;
                    if (pos < padding || pos - padding >= L) continue;
                    if (need_x)
                      in[0]->grad_buffer()[(n * ci + ic) * L + pos - padding] += gv * wrow[k];
                    if (need_w)
                      in[1]->grad_buffer()[(oc * ci + ic) * K + k] += gv * xrow[pos - padding];
                  }
                }
              }
            }
        };
      });
}

Tensor maxpool1d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  require(x.rank() == 3, "maxpool1d: input must be (N x C x L)");
  require(kernel >= 1 && stride >= 1, "maxpool1d: kernel and stride must be at least 1");
  const std::size_t N = x.dim(0), C = x.dim(1), L = x.dim(2);
  require(L >= kernel, "maxpool1d: window wider than input");
  const std::size_t lo = (L - kernel) / stride + 1;
  std::vector<double> out(N * C * lo);
  auto argmax = std::make_shared<std::vector<std::size_t>>(N * C * lo);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const double* row = x.data().data() + (n * C + c) * L;
      for (std::size_t t = 0; t < lo; ++t) {
        std::size_t best = t * stride;
        double bv = row[best];
        for (std::size_t k = 1; k < kernel; ++k) {
          const std::size_t pos = t * stride + k;
          if (row[pos] > bv) {
            bv = row[pos];
            best = pos;
          }
        }
        out[(n * C + c) * lo + t] = bv;
        (*argmax)[(n * C + c) * lo + t] = best;
      }
    }
  return detail::make_op_result(
      "maxpool1d", {x}, {N, C, lo}, std::move(out),
      [argmax, N, C, L, lo](const Node& o, const Nodes& in) {
        return [argmax, N, C, L, lo, o, in]() {
          if (!in[0]->requires_grad) return;
          const auto& g = o->grad_buffer();
          auto& gx = in[0]->grad_buffer();
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t t = 0; t < lo; ++t) {
                const std::size_t flat = (n * C + c) * lo + t;
                gx[(n * C + c) * L + (*argmax)[flat]] += g[flat];
              }
        };
      });
}

Tensor global_avg_pool1d(const Tensor& x) {
  require(x.rank() == 3, "global_avg_pool1d: input must be (N x C x L)");
  const std::size_t N = x.dim(0), C = x.dim(1), L = x.dim(2);
  require(L > 0, "global_avg_pool1d: empty length axis");
  std::vector<double> out(N * C, 0.0);
  const double inv = 1.0 / static_cast<double>(L);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const double* row = x.data().data() + (n * C + c) * L;
      double acc = 0.0;
      for (std::size_t t = 0; t < L; ++t) acc += row[t];
      out[n * C + c] = acc * inv;
    }
  return detail::make_op_result(
      "global_avg_pool1d", {x}, {N, C}, std::move(out),
      [N, C, L, inv](const Node& o, const Nodes& in) {
        return [N, C, L, inv, o, in]() {
          if (!in[0]->requires_grad) return;
          const auto& g = o->grad_buffer();
          auto& gx = in[0]->grad_buffer();
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
              const double gv = g[n * C + c] * inv;
              double* grow = gx.data() + (n * C + c) * L;
              for (std::size_t t = 0; t < L; ++t) grow[t] += gv;
            }
        };
      });
}

namespace {

// Shared batch-norm core. Elements are addressed through a per-feature walk:
// rank-2 input has F features each seen N times, rank-3 has C channels each
// seen N*L times. `index(f, r)` returns the flat offset of repeat r of
// feature f.
struct BnLayout {
  std::size_t features = 0;
  std::size_t repeats = 0;
  // rank2: idx = r * features + f. rank3: r encodes (n, l).
  bool rank3 = false;
  std::size_t channels = 0, length = 0;
  std::size_t index(std::size_t f, std::size_t r) const {
    if (!rank3) return r * features + f;
    const std::size_t n = r / length, l = r % length;
    return (n * channels + f) * length + l;
  }
};

}  // namespace

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  std::vector<double>& running_mean, std::vector<double>& running_var,
                  bool training, double momentum, double eps) {
  require(x.rank() == 2 || x.rank() == 3, "batch_norm: input must be rank-2 or rank-3");
  BnLayout lay;
  if (x.rank() == 2) {
    lay.features = x.dim(1);
    lay.repeats = x.dim(0);
  } else {
    lay.rank3 = true;
    lay.channels = x.dim(1);
    lay.length = x.dim(2);
    lay.features = lay.channels;
    lay.repeats = x.dim(0) * lay.length;
  }
  require(gamma.rank() == 1 && gamma.dim(0) == lay.features,
          "batch_norm: gamma length must equal feature count");
  require(beta.rank() == 1 && beta.dim(0) == lay.features,
          "batch_norm: beta length must equal feature count");
  require(running_mean.size() == lay.features && running_var.size() == lay.features,
          "batch_norm: running buffers must match feature count");
  require(lay.repeats > 0, "batch_norm: empty batch");

  const auto& xd = x.data();
  auto mean_v = std::make_shared<std::vector<double>>(lay.features, 0.0);
  auto inv_std = std::make_shared<std::vector<double>>(lay.features, 0.0);
  if (training) {
    const double inv_m = 1.0 / static_cast<double>(lay.repeats);
    for (std::size_t f = 0; f < lay.features; ++f) {
      double acc = 0.0;
      for (std::size_t r = 0; r < lay.repeats; ++r) acc += xd[lay.index(f, r)];
      const double mu = acc * inv_m;
      double var = 0.0;
      for (std::size_t r = 0; r < lay.repeats; ++r) {
        const double diff = xd[lay.index(f, r)] - mu;
        var += diff * diff;
      }
      var *= inv_m;
      (*mean_v)[f] = mu;
      (*inv_std)[f] = 1.0 / std::sqrt(var + eps);
      running_mean[f] = (1.0 - momentum) * running_mean[f] + momentum * mu;
      running_var[f] = (1.0 - momentum) * running_var[f] + momentum * var;
    }
  } else {
    for (std::size_t f = 0; f < lay.features; ++f) {
      (*mean_v)[f] = running_mean[f];
      (*inv_std)[f] = 1.0 / std::sqrt(running_var[f] + eps);
    }
  }

  auto xhat = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> out(x.size());
  const auto& gd = gamma.data();
  const auto& bd = beta.data();
  for (std::size_t f = 0; f < lay.features; ++f)
    for (std::size_t r = 0; r < lay.repeats; ++r) {
      const std::size_t i = lay.index(f, r);
      (*xhat)[i] = (xd[i] - (*mean_v)[f]) * (*inv_std)[f];
      out[i] = gd[f] * (*xhat)[i] + bd[f];
    }

  const char* name = training ? "batch_norm_train" : "batch_norm_eval";
  return detail::make_op_result(
      name, {x, gamma, beta}, x.shape(), std::move(out),
      [lay, xhat, inv_std, training](const Node& o, const Nodes& in) {
        return [lay, xhat, inv_std, training, o, in]() {
          const auto& g = o->grad_buffer();
          const auto& gd = in[1]->data;
          const double inv_m = 1.0 / static_cast<double>(lay.repeats);
          for (std::size_t f = 0; f < lay.features; ++f) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t r = 0; r < lay.repeats; ++r) {
              const std::size_t i = lay.index(f, r);
              sum_g += g[i];
              sum_gx += g[i] * (*xhat)[i];
            }
            if (in[1]->requires_grad) in[1]->grad_buffer()[f] += sum_gx;
            if (in[2]->requires_grad) in[2]->grad_buffer()[f] += sum_g;
            if (!in[0]->requires_grad) continue;
            auto& gx = in[0]->grad_buffer();
            const double scale = gd[f] * (*inv_std)[f];
            if (training) {
              const double mg = sum_g * inv_m;
              const double mgx = sum_gx * inv_m;
              for (std::size_t r = 0; r < lay.repeats; ++r) {
                const std::size_t i = lay.index(f, r);
                gx[i] += scale * (g[i] - mg - (*xhat)[i] * mgx);
              }
            } else {
              for (std::size_t r = 0; r < lay.repeats; ++r) {
                const std::size_t i = lay.index(f, r);
                gx[i] += scale * g[i];
              }
            }
          }
        };
      });
}

}  // namespace kavi
