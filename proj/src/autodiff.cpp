#include "attrlab/autodiff.hpp"

#include <random>
#include <stdexcept>

namespace attrlab {

namespace {

struct GradBuffer {
  std::vector<Matrix> grads;  // empty matrix = zero so far

  explicit GradBuffer(std::size_t n) : grads(n) {}

  void accum(int id, const Matrix& delta) {
    if (grads[id].size() == 0) {
      grads[id] = delta;
    } else {
      grads[id] += delta;
    }
  }

  bool has(int id) const { return grads[id].size() != 0; }
  const Matrix& at(int id) const { return grads[id]; }
};

void accum_param(std::map<std::string, Matrix>& d_params, const std::string& name,
                 const Matrix& delta) {
  auto it = d_params.find(name);
  if (it == d_params.end()) {
    d_params.emplace(name, delta);
  } else {
    it->second += delta;
  }
}

}  // namespace

GradientSet backward_from(const ForwardTrace& trace, const RowVector& d_logits) {
  if (trace.output < 0) throw std::invalid_argument("backward: incomplete trace");
  if (d_logits.size() != trace.logits.size()) {
    throw std::invalid_argument("backward: seed width does not match logits");
  }

  GradBuffer buf(trace.nodes.size());
  buf.accum(trace.output, Matrix(d_logits));

  GradientSet out;

  for (int id = int(trace.nodes.size()) - 1; id >= 0; --id) {
    if (!buf.has(id)) continue;
    const TraceNode& n = trace.nodes[id];
    const Matrix& g = buf.at(id);

    switch (n.kind) {
      case NodeKind::Leaf:
        break;
      case NodeKind::PixelEmbed: {
        // X = diag(p) E ; dp_t = sum_d g_td E_td ; dE = diag(p) g
        const Matrix& E = n.weight;
        Matrix dp = g.cwiseProduct(E).rowwise().sum();
        buf.accum(n.lhs, dp);
        const Matrix& p = trace.nodes[n.lhs].value;
        accum_param(out.d_params, n.param, p.col(0).asDiagonal() * g);
        break;
      }
      case NodeKind::TokenEmbed: {
        Matrix dE = Matrix::Zero(n.aux, n.weight.cols());
        for (std::size_t i = 0; i < n.tokens.size(); ++i) {
          dE.row(n.tokens[i]) += g.row(Eigen::Index(i));
        }
        accum_param(out.d_params, n.param, dE);
        break;
      }
      case NodeKind::Linear: {
        const Matrix& X = trace.nodes[n.lhs].value;
        buf.accum(n.lhs, g * n.weight.transpose());
        accum_param(out.d_params, n.param, X.transpose() * g);
        break;
      }
      case NodeKind::Bilinear: {
        const Matrix& A = trace.nodes[n.lhs].value;
        const Matrix& B = trace.nodes[n.rhs].value;
        const Matrix Ae = n.trans_lhs ? Matrix(A.transpose()) : A;
        const Matrix Be = n.trans_rhs ? Matrix(B.transpose()) : B;
        Matrix dAe = n.scale * (g * Be.transpose());
        Matrix dBe = n.scale * (Ae.transpose() * g);
        buf.accum(n.lhs, n.trans_lhs ? Matrix(dAe.transpose()) : dAe);
        buf.accum(n.rhs, n.trans_rhs ? Matrix(dBe.transpose()) : dBe);
        break;
      }
      case NodeKind::SoftmaxRows: {
        // dZ_ji = A_ji (g_ji - sum_i' g_ji' A_ji'); masked columns have A = 0.
        const Matrix& A = n.value;
        Matrix dZ(A.rows(), A.cols());
        for (Eigen::Index r = 0; r < A.rows(); ++r) {
          const double dot = g.row(r).dot(A.row(r));
          dZ.row(r) = A.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
        }
        buf.accum(n.lhs, dZ);
        break;
      }
      case NodeKind::Add:
        buf.accum(n.lhs, g);
        buf.accum(n.rhs, g);
        break;
      case NodeKind::Relu: {
        const Matrix& X = trace.nodes[n.lhs].value;
        // subgradient at 0 is 0
        buf.accum(n.lhs, (X.array() > 0.0).cast<double>().matrix().cwiseProduct(g));
        break;
      }
      case NodeKind::MeanPool: {
        const Matrix& X = trace.nodes[n.lhs].value;
        Matrix dX = Matrix::Zero(X.rows(), X.cols());
        if (n.active.empty()) {
          for (Eigen::Index r = 0; r < X.rows(); ++r) dX.row(r) = g.row(0) / double(X.rows());
        } else {
          int count = 0;
          for (std::uint8_t a : n.active) count += a ? 1 : 0;
          for (Eigen::Index r = 0; r < X.rows(); ++r) {
            if (n.active[r]) dX.row(r) = g.row(0) / double(count);
          }
        }
        buf.accum(n.lhs, dX);
        break;
      }
    }
  }

  out.d_inputs.reserve(trace.inputs.size());
  for (const InputRef& in : trace.inputs) {
    if (buf.has(in.node)) {
      out.d_inputs.push_back(buf.at(in.node));
    } else {
      const Matrix& v = trace.nodes[in.node].value;
      out.d_inputs.push_back(Matrix::Zero(v.rows(), v.cols()));
    }
  }
  return out;
}

GradientSet backward(const ForwardTrace& trace, int target) {
  if (target < 0 || target >= int(trace.logits.size())) {
    throw std::invalid_argument("backward: target " + std::to_string(target) +
                                " out of range [0, " + std::to_string(trace.logits.size()) +
                                ")");
  }
  RowVector seed = RowVector::Zero(trace.logits.size());
  seed(target) = 1.0;
  return backward_from(trace, seed);
}

namespace {

double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

void check_h(double h) {
  if (h < 1e-7 || h > 1e-3) {
    throw std::invalid_argument("grad_check: h must lie in [1e-7, 1e-3]");
  }
}

}  // namespace

double grad_check(const ModelGraph& m, const Matrix& input, int target, double h,
                  int n_coords, std::uint64_t seed) {
  check_h(h);
  const GradientSet gs = backward(forward(m, input), target);
  const Matrix& analytic = gs.d_inputs.at(0);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> coord(0, input.size() - 1);
  const int samples = std::min<Eigen::Index>(n_coords, input.size());

  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    const Eigen::Index i = input.size() <= n_coords ? s : coord(rng);
    Matrix lo = input, hi = input;
    hi.data()[i] += h;
    lo.data()[i] -= h;
    const double fd =
        (forward(m, hi).logits(target) - forward(m, lo).logits(target)) / (2.0 * h);
    worst = std::max(worst, relative_error(analytic.data()[i], fd));
  }
  return worst;
}

double grad_check_tokens(const ModelGraph& m, const std::vector<int>& tokens, int target,
                         double h, int n_coords, std::uint64_t seed) {
  check_h(h);
  const Matrix& E = m.params.at("embed");
  Matrix X(tokens.size(), E.cols());
  for (std::size_t i = 0; i < tokens.size(); ++i) X.row(Eigen::Index(i)) = E.row(tokens[i]);

  const GradientSet gs = backward(forward_embedded(m, X), target);
  const Matrix& analytic = gs.d_inputs.at(0);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> coord(0, X.size() - 1);
  const int samples = std::min<Eigen::Index>(n_coords, X.size());

  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    const Eigen::Index i = X.size() <= n_coords ? s : coord(rng);
    Matrix lo = X, hi = X;
    hi.data()[i] += h;
    lo.data()[i] -= h;
    const double fd = (forward_embedded(m, hi).logits(target) -
                       forward_embedded(m, lo).logits(target)) /
                      (2.0 * h);
    worst = std::max(worst, relative_error(analytic.data()[i], fd));
  }
  return worst;
}

}  // namespace attrlab
