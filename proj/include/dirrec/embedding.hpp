#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dirrec/allocation.hpp"
#include "dirrec/catalog.hpp"
#include "dirrec/common.hpp"

namespace dirrec {

/// How per-axis preferences are turned into probabilities.
enum class ScoreNormalization { Softmax, Sigmoid };

std::string to_string(ScoreNormalization n);
ScoreNormalization parse_score_normalization(const std::string& name);

/// Vectors for one axis vocabulary.
///
/// A flat table stores one parameter row per value. A composed table stores
/// tree-node rows, and a value's vector is the sum of the nodes on its path
/// (hierarchical category embedding). Materialized value vectors are cached and
/// must be refreshed after the parameters change.
class AxisTable {
 public:
  AxisTable() = default;
  AxisTable(std::size_t vocabulary, std::size_t dim);
  AxisTable(std::vector<std::vector<std::uint32_t>> paths, std::size_t num_nodes, std::size_t dim);

  std::size_t vocabulary_size() const { return values_.rows(); }
  std::size_t dim() const { return values_.cols(); }
  bool composed() const { return !paths_.empty(); }
  const std::vector<std::vector<std::uint32_t>>& paths() const { return paths_; }

  const Matrix& values() const { return values_; }
  std::span<const double> vector(std::size_t value) const { return values_.row(value); }

  Matrix& parameters() { return params_; }
  const Matrix& parameters() const { return params_; }

  /// Sum of node vectors along `path`; throws std::out_of_range on an unknown node.
  std::vector<double> compose(std::span<const std::uint32_t> path) const;

  /// Recomputes cached value vectors from the parameters.
  void refresh();

  /// Adds alpha·delta to a value's vector through its parameters and keeps the
  /// cache current.
  void add_to_value(std::size_t value, double alpha, std::span<const double> delta);

  /// Maps a gradient over value vectors onto the parameter rows.
  void accumulate_gradient(const Matrix& value_grad, Matrix& param_grad) const;

 private:
  Matrix params_;
  std::vector<std::vector<std::uint32_t>> paths_;
  Matrix values_;
};

/// All attribute vectors of an attribute space, plus user vectors for the MF
/// head (empty for sequential heads).
class EmbeddingStore {
 public:
  EmbeddingStore() = default;

  /// Uniform(-0.1/√d, 0.1/√d) initialization. The category axis is composed
  /// from the category tree when `hierarchical_category` is set.
  static EmbeddingStore create(const AttributeSpace& space, const Catalog& catalog, std::size_t dim,
                               std::size_t num_users, bool hierarchical_category, Rng& rng);

  std::size_t dim() const { return dim_; }
  std::size_t num_axes() const { return axes_.size(); }
  AxisTable& axis(std::size_t a) { return axes_[a]; }
  const AxisTable& axis(std::size_t a) const { return axes_[a]; }
  Matrix& users() { return users_; }
  const Matrix& users() const { return users_; }

  std::size_t parameter_count() const;
  void refresh();

  static double init_scale(std::size_t dim);

  // Assembly from deserialized parts.
  EmbeddingStore(std::size_t dim, std::vector<AxisTable> axes, Matrix users)
      : dim_(dim), axes_(std::move(axes)), users_(std::move(users)) {}

 private:
  std::size_t dim_ = 0;
  std::vector<AxisTable> axes_;
  Matrix users_;
};

struct AxisScore {
  std::vector<double> probabilities;
  std::vector<double> log_probabilities;  // clamped at ln(1e-12)
};

AxisScore axis_scores(std::span<const double> context, const AxisTable& table,
                      ScoreNormalization normalization = ScoreNormalization::Softmax);

/// Product over axes of the probability of the item's coordinate.
double item_score(std::span<const double> context, ItemIndex item, const Allocation& allocation,
                  const EmbeddingStore& store,
                  ScoreNormalization normalization = ScoreNormalization::Softmax);

struct ContextItem {
  std::span<const double> context;
  ItemIndex item = 0;
};

/// Gradients of the negative log loss with respect to every axis parameter
/// table and every context vector in the batch.
struct LossGradients {
  double loss = 0.0;
  std::vector<Matrix> axes;  // shaped like each axis' parameters
  Matrix contexts;           // batch × d

  void reset(const EmbeddingStore& store, std::size_t batch);
};

/// J = -Σ_pairs Σ_axes ln p_axis(coordinate), with exact gradients.
void loss_and_gradients(std::span<const ContextItem> batch, const Allocation& allocation,
                        const EmbeddingStore& store, ScoreNormalization normalization,
                        LossGradients& out);

/// Descent step on the axis tables; throws NumericalError on a non-finite
/// gradient. Refreshes the cached value vectors.
void sgd_step(EmbeddingStore& store, const LossGradients& gradients, double learning_rate,
              double weight_decay = 0.0);

/// Initial rate halved once per `halving_period` epochs (epochs count from 0).
double learning_rate_at(std::size_t epoch, double initial, std::size_t halving_period);

/// Sum of the category-tree node vectors along a leaf path.
std::vector<double> category_vector(const AxisTable& category_axis,
                                    std::span<const std::uint32_t> node_path);

}  // namespace dirrec
