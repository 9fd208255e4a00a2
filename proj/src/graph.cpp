#include "stjla/graph.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <queue>
#include <sstream>

#include "stjla/ops.hpp"

namespace stjla {

RoadGraph::RoadGraph(Index n_nodes, const std::vector<Edge>& edges) : n_(n_nodes) {
  if (n_nodes < 1) throw GraphFormatError("graph needs at least one node");
  std::map<std::pair<Index, Index>, Scalar> merged;
  for (const Edge& e : edges) {
    if (e.src < 0 || e.src >= n_ || e.dst < 0 || e.dst >= n_) {
      throw GraphFormatError("edge " + std::to_string(e.src) + "->" + std::to_string(e.dst) +
                             " out of range for " + std::to_string(n_) + " nodes");
    }
    if (!(e.weight >= 0)) {
      throw GraphFormatError("edge " + std::to_string(e.src) + "->" + std::to_string(e.dst) +
                             " has negative or NaN weight");
    }
    merged[{e.src, e.dst}] = e.weight;
  }
  adjacency_ = Matrix::Zero(n_, n_);
  for (const auto& [key, w] : merged) {
    if (w == 0) continue;
    edges_.push_back({key.first, key.second, w});
    adjacency_(key.first, key.second) = w;
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  const auto* end = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(t.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

RoadGraph load_road_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw GraphFormatError("cannot open graph file '" + path.string() + "'");
  std::vector<Edge> edges;
  Index declared = -1;
  Index max_index = -1;
  std::string line;
  int line_no = 0;
  bool seen_data = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.rfind("N=", 0) == 0 || t.rfind("N =", 0) == 0) {
      long long n = 0;
      if (!parse_number(t.substr(t.find('=') + 1), n) || n < 1) {
        throw GraphFormatError(path.string() + ":" + std::to_string(line_no) + ": bad node count line");
      }
      declared = static_cast<Index>(n);
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(t);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    long long src = 0, dst = 0;
    double w = 0;
    const bool ok = cells.size() == 3 && parse_number(cells[0], src) && parse_number(cells[1], dst) &&
                    parse_number(cells[2], w);
    if (!ok) {
      if (!seen_data) {  // header
        seen_data = true;
        continue;
      }
      throw GraphFormatError(path.string() + ":" + std::to_string(line_no) + ": expected 'src,dst,weight'");
    }
    seen_data = true;
    if (src < 0 || dst < 0) {
      throw GraphFormatError(path.string() + ":" + std::to_string(line_no) + ": negative node index");
    }
    edges.push_back({static_cast<Index>(src), static_cast<Index>(dst), static_cast<Scalar>(w)});
    max_index = std::max({max_index, static_cast<Index>(src), static_cast<Index>(dst)});
  }
  const Index n = declared > 0 ? declared : max_index + 1;
  if (n < 1) throw GraphFormatError("graph file '" + path.string() + "' declares no nodes");
  return RoadGraph(n, edges);
}

void save_road_graph(const std::filesystem::path& path, const RoadGraph& g) {
  std::ofstream out(path);
  if (!out) throw GraphFormatError("cannot open '" + path.string() + "' for writing");
  out << "N=" << g.size() << '\n';
  out.precision(17);
  for (const Edge& e : g.edges()) out << e.src << ',' << e.dst << ',' << e.weight << '\n';
}

HopDistanceMatrix shortest_path_hops(const RoadGraph& g) {
  const Index n = g.size();
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(n));
  for (const Edge& e : g.edges()) {
    if (e.src != e.dst) out[static_cast<std::size_t>(e.src)].push_back(e.dst);
  }
  HopDistanceMatrix s = HopDistanceMatrix::Constant(n, n, kUnreachable);
  std::queue<Index> frontier;
  for (Index src = 0; src < n; ++src) {
    s(src, src) = 0;
    frontier.push(src);
    while (!frontier.empty()) {
      const Index u = frontier.front();
      frontier.pop();
      for (Index v : out[static_cast<std::size_t>(u)]) {
        if (s(src, v) == kUnreachable) {
          s(src, v) = s(src, u) + 1;
          frontier.push(v);
        }
      }
    }
  }
  return s;
}

HopMatrix::HopMatrix(Index n_nodes, std::vector<std::vector<std::pair<Index, Index>>> pairs)
    : n_(n_nodes), pairs_(std::move(pairs)) {
  for (const auto& hop : pairs_) {
    // Out-degree of row j and in-degree of column l under this hop's H.
    Eigen::VectorXd out_deg = Eigen::VectorXd::Zero(n_);
    Eigen::VectorXd in_deg = Eigen::VectorXd::Zero(n_);
    for (const auto& [j, l] : hop) {
      out_deg[j] += 1;
      in_deg[l] += 1;
    }
    std::vector<Eigen::Triplet<Scalar>> trips;
    trips.reserve(hop.size() * 2);
    for (const auto& [j, l] : hop) {
      trips.emplace_back(j, l, static_cast<Scalar>(1.0 / out_deg[j]));
      trips.emplace_back(l, j, static_cast<Scalar>(1.0 / in_deg[l]));
    }
    SparseMatrix p(n_, n_);
    p.setFromTriplets(trips.begin(), trips.end());
    propagation_.push_back(std::make_shared<const SparseMatrix>(std::move(p)));
  }
}

const std::vector<std::pair<Index, Index>>& HopMatrix::pairs(Index hop) const {
  if (hop < 1 || hop > hops()) throw ContractError("hop index " + std::to_string(hop) + " out of range");
  return pairs_[static_cast<std::size_t>(hop - 1)];
}

Eigen::MatrixXi HopMatrix::dense(Index hop) const {
  Eigen::MatrixXi h = Eigen::MatrixXi::Zero(n_, n_);
  for (const auto& [j, l] : pairs(hop)) h(j, l) = 1;
  return h;
}

const std::shared_ptr<const SparseMatrix>& HopMatrix::propagation(Index hop) const {
  pairs(hop);
  return propagation_[static_cast<std::size_t>(hop - 1)];
}

HopMatrix hop_adjacency(const HopDistanceMatrix& s, Index k) {
  if (k < 1) throw ContractError("hop count k must be >= 1");
  std::vector<std::vector<std::pair<Index, Index>>> pairs(static_cast<std::size_t>(k));
  for (Index j = 0; j < s.rows(); ++j) {
    for (Index l = 0; l < s.cols(); ++l) {
      const int d = s(j, l);
      if (d >= 1 && d <= k) pairs[static_cast<std::size_t>(d - 1)].emplace_back(j, l);
    }
  }
  return HopMatrix(s.rows(), std::move(pairs));
}

Matrix diffusion_operator(const Matrix& adjacency, int k_step) {
  if (k_step < 0) throw ContractError("diffusion step must be >= 0");
  if (adjacency.rows() != adjacency.cols()) throw ShapeError("adjacency must be square");
  const Matrix fwd = degree_normalize(adjacency, FlowDirection::kOut);
  const Matrix bwd = degree_normalize(adjacency, FlowDirection::kIn);
  Matrix pf = Matrix::Identity(adjacency.rows(), adjacency.cols());
  Matrix pb = pf;
  for (int i = 0; i < k_step; ++i) {
    pf = (pf * fwd).eval();
    pb = (pb * bwd).eval();
  }
  return pf + pb;
}

Tensor propagate(std::shared_ptr<const SparseMatrix> op, const Tensor& x) {
  if (x.rank() != 2 && x.rank() != 3) throw ShapeError("propagate expects [N x G] or [T x N x G], got " + to_string(x.shape()));
  const Index n = x.dim(-2);
  const Index g = x.dim(-1);
  if (op->rows() != n || op->cols() != n) {
    throw ShapeError("propagate: operator " + std::to_string(op->rows()) + "x" + std::to_string(op->cols()) +
                     " does not match node axis of " + to_string(x.shape()));
  }
  const Index blocks = x.size() / (n * g);
  Vector value(x.size());
  for (Index b = 0; b < blocks; ++b) {
    MatrixMap(value.data() + b * n * g, n, g) = *op * ConstMatrixMap(x.data().data() + b * n * g, n, g);
  }
  return detail::make_result(x.shape(), std::move(value), {x}, [op, blocks, n, g](detail::Node& self) {
    Vector grad(self.value.size());
    for (Index b = 0; b < blocks; ++b) {
      MatrixMap(grad.data() + b * n * g, n, g) = op->transpose() * ConstMatrixMap(self.grad.data() + b * n * g, n, g);
    }
    self.inputs[0]->accumulate(grad);
  });
}

Tensor diffusion_conv(const Tensor& x, const Matrix& adjacency, int k_step, const Tensor& w) {
  if (x.rank() != 2 || x.dim(0) != adjacency.rows()) {
    throw ShapeError("diffusion_conv: input " + to_string(x.shape()) + " does not match a graph of " +
                     std::to_string(adjacency.rows()) + " nodes");
  }
  auto op = std::make_shared<const SparseMatrix>(diffusion_operator(adjacency, k_step).sparseView());
  return propagate(std::move(op), linear(x, w));
}

Tensor mhdcn(const Tensor& x, const HopMatrix& hops, const MhdcnWeights& weights) {
  if (static_cast<Index>(weights.w_x.size()) != hops.hops()) {
    throw ShapeError("mhdcn: " + std::to_string(weights.w_x.size()) + " head projections for " +
                     std::to_string(hops.hops()) + " hops");
  }
  std::vector<Tensor> heads;
  heads.reserve(weights.w_x.size());
  for (Index i = 0; i < hops.hops(); ++i) {
    heads.push_back(propagate(hops.propagation(i + 1), linear(x, weights.w_x[static_cast<std::size_t>(i)])));
  }
  return linear(concat(heads, -1), weights.w_d);
}

}  // namespace stjla
