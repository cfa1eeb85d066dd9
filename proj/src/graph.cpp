#include "kavi/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kavi/ops.hpp"

namespace kavi {

InstanceGraph build_instance_graph(const Tensor& features, std::size_t k,
                                   bool isolate_zero_rows) {
  if (features.rank() != 2)
    throw TensorError("build_instance_graph: features must be rank-2");
  const std::size_t n = features.dim(0), d = features.dim(1);
  if (k < 1 || k > n)
    throw TensorError("build_instance_graph: need 1 <= k <= node count, k=" +
                      std::to_string(k) + " n=" + std::to_string(n));
  features.check_finite("build_instance_graph features");

  // Row-unit-L2 normalization makes X X^T a cosine similarity matrix.
  std::vector<double> normed(n * d);
  std::vector<bool> zero_row(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t t = 0; t < d; ++t) {
      const double v = features.data()[i * d + t];
      sq += v * v;
    }
    if (sq == 0.0) {
      if (!isolate_zero_rows)
        throw TensorError("build_instance_graph: zero-norm feature row " + std::to_string(i));
      zero_row[i] = true;
      continue;  // normed row stays zero, self-similarity patched below
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t t = 0; t < d; ++t) normed[i * d + t] = features.data()[i * d + t] * inv;
  }

  std::vector<double> sim(n * n, 0.0);
  detail::mm_nt(normed.data(), normed.data(), sim.data(), n, n, d);
  for (std::size_t i = 0; i < n; ++i)
    if (zero_row[i]) sim[i * n + i] = 1.0;

  InstanceGraph g;
  g.n = n;
  g.k = k;
  g.node_features = features.detach();
  g.adjacency.reserve(n * k);

  // Dense symmetrized weights for Laplacian assembly.
  std::vector<double> weights(n * n, 0.0);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::iota(order.begin(), order.end(), 0);
    const double* row = sim.data() + i * n;
    std::stable_sort(order.begin(), order.end(), [row](std::size_t a, std::size_t b) {
      if (row[a] != row[b]) return row[a] > row[b];
      return a < b;
    });
    for (std::size_t r = 0; r < k; ++r) {
      const std::size_t j = order[r];
      const double w = std::max(row[j], 0.0);
      g.adjacency.push_back({i, j, w});
      weights[i * n + j] = std::max(weights[i * n + j], w);
      weights[j * n + i] = std::max(weights[j * n + i], w);
    }
  }

  // Self-similarity is 1 and always survives selection, so degrees are
  // bounded away from zero.
  InstanceGraph assembled = graph_from_weights(n, weights);
  g.sym_laplacian = std::move(assembled.sym_laplacian);
  g.filter_matrix = std::move(assembled.filter_matrix);
  return g;
}

InstanceGraph graph_from_weights(std::size_t n, const std::vector<double>& weights) {
  if (weights.size() != n * n)
    throw TensorError("graph_from_weights: weight matrix must be n x n");
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (weights[i * n + j] < 0.0)
        throw TensorError("graph_from_weights: negative weight");
      if (weights[i * n + j] != weights[j * n + i])
        throw TensorError("graph_from_weights: weights not symmetric");
      deg += weights[i * n + j];
    }
    if (deg <= 0.0)
      throw TensorError("graph_from_weights: node " + std::to_string(i) +
                        " has zero degree");
    inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
  }

  std::vector<double> lap(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      lap[i * n + j] = -inv_sqrt_deg[i] * weights[i * n + j] * inv_sqrt_deg[j];
    lap[i * n + i] += 1.0;
  }
  std::vector<double> filt(n * n);
  for (std::size_t i = 0; i < n * n; ++i) filt[i] = -lap[i];
  for (std::size_t i = 0; i < n; ++i) filt[i * n + i] += 1.0;

  InstanceGraph g;
  g.n = n;
  g.k = 0;
  g.sym_laplacian = Tensor::from_data({n, n}, std::move(lap));
  g.filter_matrix = Tensor::from_data({n, n}, std::move(filt));
  return g;
}

Tensor arma1_step(const Tensor& x_bar, const Tensor& x0, const Tensor& f,
                  double p, double q) {
  return add(mul(matmul(f, x_bar), p), mul(x0, q));
}

Tensor arma1_fixed_point(const InstanceGraph& graph, const Tensor& x0,
                         double p, double q, std::size_t max_iter, double tol) {
  if (x0.rank() != 2 || x0.dim(0) != graph.n)
    throw TensorError("arma1_fixed_point: signal must be (N x d) with graph's N");
  // The filter matrix spectrum touches 1 (Laplacian eigenvalue 0 always
  // exists), so the contraction condition |p| * max|gamma| < 1 is |p| < 1.
  if (std::abs(p) >= 1.0)
    throw TensorError("arma1_fixed_point: |p| = " + std::to_string(std::abs(p)) +
                      " yields spectral radius >= 1, recursion diverges");
  NoGradGuard guard;
  const std::size_t n = graph.n, d = x0.dim(1);
  std::vector<double> cur(n * d, 0.0), next(n * d);
  const auto& f = graph.filter_matrix.data();
  for (std::size_t it = 0; it < max_iter; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    detail::mm_nn(f.data(), cur.data(), next.data(), n, n, d);
    double diff = 0.0;
    for (std::size_t i = 0; i < n * d; ++i) {
      next[i] = p * next[i] + q * x0.data()[i];
      diff = std::max(diff, std::abs(next[i] - cur[i]));
    }
    cur.swap(next);
    if (diff < tol) return Tensor::from_data({n, d}, std::move(cur));
  }
  throw TensorError("arma1_fixed_point: no convergence within " +
                    std::to_string(max_iter) + " iterations");
}

Tensor arma_k_fixed_point(const InstanceGraph& graph, const Tensor& x0,
                          const std::vector<double>& ps, const std::vector<double>& qs,
                          std::size_t max_iter, double tol) {
  if (ps.empty() || ps.size() != qs.size())
    throw TensorError("arma_k_fixed_point: need matching non-empty coefficient lists");
  NoGradGuard guard;
  Tensor acc = arma1_fixed_point(graph, x0, ps[0], qs[0], max_iter, tol);
  for (std::size_t k = 1; k < ps.size(); ++k)
    acc = add(acc, arma1_fixed_point(graph, x0, ps[k], qs[k], max_iter, tol));
  return acc;
}

Tensor arma_layer_forward(const InstanceGraph& graph, const Tensor& features,
                          const ArmaLayerParams& params) {
  if (features.rank() != 2 || features.dim(0) != graph.n)
    throw TensorError("arma_layer_forward: features must be (N x d) with graph's N");
  Tensor conv = matmul(graph.filter_matrix, matmul(features, params.w));
  Tensor skip = matmul(features, params.v);
  return relu(add(conv, skip));
}

Tensor armaK_forward(const InstanceGraph& graph, const Tensor& features,
                     const std::vector<ArmaLayerParams>& stacks) {
  if (stacks.empty()) throw TensorError("armaK_forward: empty stack list");
  Tensor acc = arma_layer_forward(graph, features, stacks[0]);
  for (std::size_t k = 1; k < stacks.size(); ++k)
    acc = add(acc, arma_layer_forward(graph, features, stacks[k]));
  return acc;
}

}  // namespace kavi
