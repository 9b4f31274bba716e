#pragma once

#include <span>
#include <string>
#include <vector>

#include "dirrec/common.hpp"

namespace dirrec {

enum class RnnCell { Lstm, Vanilla };

std::string to_string(RnnCell c);
RnnCell parse_rnn_cell(const std::string& name);

struct CellGradients {
  Matrix input_weights;
  Matrix recurrent_weights;
  Matrix bias;

  void reset(std::size_t gate_rows, std::size_t input_dim, std::size_t hidden_dim);
};

/// Recurrent cell mapping (h, c, x) to the next (h, c).
///
/// LSTM gate rows are stacked as [input; forget; output; candidate]:
///   c' = f⊙c + i⊙g,  h' = o⊙tanh(c')
/// The vanilla cell is h' = σ(W·x + V·h + b) and leaves c untouched.
class RecurrentCell {
 public:
  struct State {
    std::vector<double> h;
    std::vector<double> c;
  };

  /// Per-step values kept for backpropagation through time.
  struct Step {
    std::vector<double> x, h_prev, c_prev, gates, c, h;
  };

  RecurrentCell() = default;
  RecurrentCell(std::size_t input_dim, std::size_t hidden_dim, RnnCell type);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden_dim() const { return hidden_dim_; }
  RnnCell type() const { return type_; }
  std::size_t gate_rows() const { return (type_ == RnnCell::Lstm ? 4 : 1) * hidden_dim_; }

  Matrix& input_weights() { return w_in_; }
  Matrix& recurrent_weights() { return w_rec_; }
  Matrix& bias() { return bias_; }
  const Matrix& input_weights() const { return w_in_; }
  const Matrix& recurrent_weights() const { return w_rec_; }
  const Matrix& bias() const { return bias_; }

  std::size_t parameter_count() const { return w_in_.size() + w_rec_.size() + bias_.size(); }

  void initialize(double scale, Rng& rng);

  State initial_state() const;
  State step(const State& prev, std::span<const double> x) const;

  /// Runs the cell from the zero state; trace[t].h is the state after input t.
  std::vector<Step> forward(std::span<const std::vector<double>> inputs) const;

  /// Backpropagates dL/dh for every step. Accumulates into `grads` and writes
  /// dL/dx into `input_grads` (steps × input_dim).
  void backward(std::span<const Step> trace, const Matrix& hidden_grads, CellGradients& grads,
                Matrix& input_grads) const;

  /// Descent update; throws NumericalError on a non-finite gradient.
  void apply(const CellGradients& grads, double learning_rate, double weight_decay = 0.0);

 private:
  Step run(const State& prev, std::span<const double> x) const;

  std::size_t input_dim_ = 0;
  std::size_t hidden_dim_ = 0;
  RnnCell type_ = RnnCell::Lstm;
  Matrix w_in_;
  Matrix w_rec_;
  Matrix bias_;
};

}  // namespace dirrec
