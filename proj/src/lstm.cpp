#include "dirrec/lstm.hpp"

#include <cmath>

namespace dirrec {
namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_finite(const Matrix& m, const char* what) {
  for (double v : m.values()) {
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite gradient in recurrent ") + what);
  }
}

}  // namespace

std::string to_string(RnnCell c) { return c == RnnCell::Lstm ? "lstm" : "vanilla"; }

RnnCell parse_rnn_cell(const std::string& name) {
  if (name == "lstm") return RnnCell::Lstm;
  if (name == "vanilla") return RnnCell::Vanilla;
  throw InputError("unknown rnn cell '" + name + "'");
}

void CellGradients::reset(std::size_t gate_rows, std::size_t input_dim, std::size_t hidden_dim) {
  input_weights = Matrix(gate_rows, input_dim);
  recurrent_weights = Matrix(gate_rows, hidden_dim);
  bias = Matrix(1, gate_rows);
}

RecurrentCell::RecurrentCell(std::size_t input_dim, std::size_t hidden_dim, RnnCell type)
    : input_dim_(input_dim), hidden_dim_(hidden_dim), type_(type) {
  w_in_ = Matrix(gate_rows(), input_dim);
  w_rec_ = Matrix(gate_rows(), hidden_dim);
  bias_ = Matrix(1, gate_rows());
}

void RecurrentCell::initialize(double scale, Rng& rng) {
  fill_uniform(w_in_.values(), scale, rng);
  fill_uniform(w_rec_.values(), scale, rng);
  bias_.fill(0.0);
}

RecurrentCell::State RecurrentCell::initial_state() const {
  return {std::vector<double>(hidden_dim_, 0.0), std::vector<double>(hidden_dim_, 0.0)};
}

RecurrentCell::Step RecurrentCell::run(const State& prev, std::span<const double> x) const {
  const std::size_t h = hidden_dim_;
  Step s;
  s.x.assign(x.begin(), x.end());
  s.h_prev = prev.h;
  s.c_prev = prev.c;
  s.gates.resize(gate_rows());
  for (std::size_t r = 0; r < gate_rows(); ++r) {
    s.gates[r] = bias_(0, r) + dot(w_in_.row(r), x) + dot(w_rec_.row(r), prev.h);
  }
  s.c.resize(h);
  s.h.resize(h);
  if (type_ == RnnCell::Vanilla) {
    for (std::size_t k = 0; k < h; ++k) {
      s.gates[k] = sigmoid(s.gates[k]);
      s.h[k] = s.gates[k];
    }
    s.c = prev.c;
    return s;
  }
  for (std::size_t k = 0; k < h; ++k) {
    const double i = sigmoid(s.gates[k]);
    const double f = sigmoid(s.gates[h + k]);
    const double o = sigmoid(s.gates[2 * h + k]);
    const double g = std::tanh(s.gates[3 * h + k]);
    s.gates[k] = i;
    s.gates[h + k] = f;
    s.gates[2 * h + k] = o;
    s.gates[3 * h + k] = g;
    s.c[k] = f * prev.c[k] + i * g;
    s.h[k] = o * std::tanh(s.c[k]);
  }
  return s;
}

RecurrentCell::State RecurrentCell::step(const State& prev, std::span<const double> x) const {
  auto s = run(prev, x);
  return {std::move(s.h), std::move(s.c)};
}

std::vector<RecurrentCell::Step> RecurrentCell::forward(
    std::span<const std::vector<double>> inputs) const {
  std::vector<Step> trace;
  trace.reserve(inputs.size());
  State state = initial_state();
  for (const auto& x : inputs) {
    trace.push_back(run(state, x));
    state.h = trace.back().h;
    state.c = trace.back().c;
  }
  return trace;
}

void RecurrentCell::backward(std::span<const Step> trace, const Matrix& hidden_grads,
                             CellGradients& grads, Matrix& input_grads) const {
  const std::size_t h = hidden_dim_;
  const std::size_t rows = gate_rows();
  input_grads = Matrix(trace.size(), input_dim_);
  std::vector<double> dh_next(h, 0.0), dc_next(h, 0.0), dz(rows);
  for (std::size_t t = trace.size(); t-- > 0;) {
    const auto& s = trace[t];
    std::vector<double> dh(h);
    for (std::size_t k = 0; k < h; ++k) dh[k] = hidden_grads(t, k) + dh_next[k];

    if (type_ == RnnCell::Vanilla) {
      for (std::size_t k = 0; k < h; ++k) dz[k] = dh[k] * s.h[k] * (1.0 - s.h[k]);
      // The vanilla cell passes c through unchanged.
    } else {
      for (std::size_t k = 0; k < h; ++k) {
        const double i = s.gates[k], f = s.gates[h + k], o = s.gates[2 * h + k], g = s.gates[3 * h + k];
        const double tc = std::tanh(s.c[k]);
        const double dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
        dz[k] = dc * g * i * (1.0 - i);
        dz[h + k] = dc * s.c_prev[k] * f * (1.0 - f);
        dz[2 * h + k] = dh[k] * tc * o * (1.0 - o);
        dz[3 * h + k] = dc * i * (1.0 - g * g);
        dc_next[k] = dc * f;
      }
    }

    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    auto dx = input_grads.row(t);
    for (std::size_t r = 0; r < rows; ++r) {
      if (dz[r] == 0.0) continue;
      axpy(dz[r], s.x, grads.input_weights.row(r));
      axpy(dz[r], s.h_prev, grads.recurrent_weights.row(r));
      grads.bias(0, r) += dz[r];
      axpy(dz[r], w_in_.row(r), dx);
      axpy(dz[r], w_rec_.row(r), dh_next);
    }
  }
}

void RecurrentCell::apply(const CellGradients& grads, double learning_rate, double weight_decay) {
  check_finite(grads.input_weights, "input weights");
  check_finite(grads.recurrent_weights, "recurrent weights");
  check_finite(grads.bias, "bias");
  auto update = [&](Matrix& p, const Matrix& g) {
    for (std::size_t k = 0; k < p.size(); ++k) {
      p.values()[k] -= learning_rate * (g.values()[k] + weight_decay * p.values()[k]);
    }
  };
  update(w_in_, grads.input_weights);
  update(w_rec_, grads.recurrent_weights);
  update(bias_, grads.bias);
}

}  // namespace dirrec
