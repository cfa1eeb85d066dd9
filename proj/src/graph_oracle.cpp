#include "kavi/graph_oracle.hpp"

#include <Eigen/Dense>

#include <iomanip>
#include <sstream>

namespace kavi {

namespace {

Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solve(const InstanceGraph& graph) {
  const std::size_t n = graph.n;
  if (n > 256)
    throw TensorError("spectral oracle: dense eigendecomposition capped at N <= 256");
  Eigen::MatrixXd lap(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      lap(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          graph.sym_laplacian.data()[i * n + j];
  if (!lap.isApprox(lap.transpose(), 1e-10))
    throw TensorError("spectral oracle: Laplacian is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lap);
  if (es.info() != Eigen::Success)
    throw TensorError("spectral oracle: eigendecomposition failed");
  return es;
}

}  // namespace

Tensor spectral_filter_oracle(const InstanceGraph& graph,
                              const std::function<double(double)>& response,
                              const Tensor& signal) {
  if (signal.rank() != 2 || signal.dim(0) != graph.n)
    throw TensorError("spectral oracle: signal must be (N x d) with graph's N");
  const auto es = solve(graph);
  const std::size_t n = graph.n, d = signal.dim(1);
  Eigen::MatrixXd x(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          signal.data()[i * d + j];
  Eigen::VectorXd h(n);
  for (std::size_t f = 0; f < n; ++f)
    h(static_cast<Eigen::Index>(f)) = response(es.eigenvalues()(static_cast<Eigen::Index>(f)));
  const Eigen::MatrixXd out =
      es.eigenvectors() * h.asDiagonal() * es.eigenvectors().transpose() * x;
  std::vector<double> data(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      data[i * d + j] = out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  return Tensor::from_data({n, d}, std::move(data));
}

std::vector<double> sym_laplacian_eigenvalues(const InstanceGraph& graph) {
  const auto es = solve(graph);
  std::vector<double> vals(graph.n);
  for (std::size_t i = 0; i < graph.n; ++i)
    vals[i] = es.eigenvalues()(static_cast<Eigen::Index>(i));
  return vals;
}

std::string debug_dump(const InstanceGraph& graph) {
  std::ostringstream os;
  os << std::setprecision(12);
  os << "nodes " << graph.n << "\n"
     << "k " << graph.k << "\n"
     << "adjacency\n";
  for (const auto& e : graph.adjacency)
    os << e.i << " " << e.j << " " << e.w << "\n";
  os << "eigenvalues\n";
  for (double v : sym_laplacian_eigenvalues(graph)) os << v << "\n";
  return os.str();
}

}  // namespace kavi
