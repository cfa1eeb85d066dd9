#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kavi/graph.hpp"

namespace kavi {

// Exact spectral filtering U diag(h(lambda)) U^T X via dense symmetric
// eigendecomposition of L^sym. Validation-only path, N <= 256.
Tensor spectral_filter_oracle(const InstanceGraph& graph,
                              const std::function<double(double)>& response,
                              const Tensor& signal);

// Eigenvalues of L^sym in ascending order.
std::vector<double> sym_laplacian_eigenvalues(const InstanceGraph& graph);

// Plain-text dump for golden-file tests: N, K, adjacency triplets, spectrum.
std::string debug_dump(const InstanceGraph& graph);

}  // namespace kavi
