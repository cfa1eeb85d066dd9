#pragma once

#include <cstddef>
#include <vector>

#include "kavi/tensor.hpp"

namespace kavi {

// Minibatch instance graph: nodes are samples, edges are top-k cosine
// similarities. `adjacency` stores exactly k entries per row in row-major
// order, before symmetrization; the Laplacian is built from the symmetrized
// weights, so sym_laplacian is symmetric with eigenvalues in [0, 2].
struct InstanceGraph {
  struct Edge {
    std::size_t i = 0, j = 0;
    double w = 0.0;
  };

  std::size_t n = 0;
  std::size_t k = 0;
  Tensor node_features;          // N x d, not differentiated through
  std::vector<Edge> adjacency;   // k entries per row, row-major
  Tensor sym_laplacian;          // N x N dense
  Tensor filter_matrix;          // I - L^sym, the recursion operator
};

// Builds the graph from raw features: rows are L2-normalized, similarities
// are cosines, each row keeps its k largest entries (ties to the lowest
// column), negative survivors clamp to zero so the normalized Laplacian
// stays positive semidefinite. A zero-norm row has no defined cosine and is
// rejected by default; with isolate_zero_rows such rows become self-loop-only
// nodes (similar to themselves, orthogonal to everything else).
InstanceGraph build_instance_graph(const Tensor& features, std::size_t k,
                                   bool isolate_zero_rows = false);

// Assembles Laplacian and filter matrix from an explicit symmetric
// nonnegative weight matrix (dense n x n, row-major). Every node needs
// positive degree. Used by tests that construct specific topologies.
InstanceGraph graph_from_weights(std::size_t n, const std::vector<double>& weights);

// One recursion step p * (F x_bar) + q * x0. Differentiable.
Tensor arma1_step(const Tensor& x_bar, const Tensor& x0, const Tensor& f,
                  double p, double q);

// Iterates the recursion on the graph's filter matrix until successive
// iterates differ by less than tol in max norm. The operator's spectrum lies
// in [-1, 1] and 1 is always attained (the Laplacian has eigenvalue 0), so
// convergence requires |p| < 1; violations and exhausted iteration budgets
// raise. Non-differentiable validation path.
Tensor arma1_fixed_point(const InstanceGraph& graph, const Tensor& x0,
                         double p, double q, std::size_t max_iter, double tol);

// Sum of per-stack fixed points, the untrained multi-stack response.
Tensor arma_k_fixed_point(const InstanceGraph& graph, const Tensor& x0,
                          const std::vector<double>& ps, const std::vector<double>& qs,
                          std::size_t max_iter, double tol);

// One trainable graph-convolution stack.
struct ArmaLayerParams {
  Tensor w;  // d_in x d_out
  Tensor v;  // d_in x d_out
};

// ReLU(F (X W) + X V) with F the graph's filter matrix. Differentiable.
Tensor arma_layer_forward(const InstanceGraph& graph, const Tensor& features,
                          const ArmaLayerParams& params);

// Sum of independent trainable stacks applied to the same input.
Tensor armaK_forward(const InstanceGraph& graph, const Tensor& features,
                     const std::vector<ArmaLayerParams>& stacks);

}  // namespace kavi
