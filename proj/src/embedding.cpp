#include "dirrec/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dirrec {
namespace {

const double kLogFloor = std::log(kProbabilityFloor);

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

std::string to_string(ScoreNormalization n) {
  return n == ScoreNormalization::Softmax ? "softmax" : "sigmoid";
}

ScoreNormalization parse_score_normalization(const std::string& name) {
  if (name == "softmax") return ScoreNormalization::Softmax;
  if (name == "sigmoid") return ScoreNormalization::Sigmoid;
  throw InputError("unknown score normalization '" + name + "'");
}

AxisTable::AxisTable(std::size_t vocabulary, std::size_t dim)
    : params_(vocabulary, dim), values_(vocabulary, dim) {}

AxisTable::AxisTable(std::vector<std::vector<std::uint32_t>> paths, std::size_t num_nodes,
                     std::size_t dim)
    : params_(num_nodes, dim), paths_(std::move(paths)), values_(paths_.size(), dim) {
  for (const auto& path : paths_) {
    if (path.empty()) throw std::invalid_argument("empty composition path");
    for (auto n : path) {
      if (n >= num_nodes) throw std::out_of_range("composition path references unknown node");
    }
  }
}

std::vector<double> AxisTable::compose(std::span<const std::uint32_t> path) const {
  std::vector<double> v(params_.cols(), 0.0);
  for (auto n : path) {
    if (n >= params_.rows()) throw std::out_of_range("unknown category node " + std::to_string(n));
    axpy(1.0, params_.row(n), v);
  }
  return v;
}

void AxisTable::refresh() {
  if (!composed()) {
    values_ = params_;
    return;
  }
  values_.fill(0.0);
  for (std::size_t v = 0; v < paths_.size(); ++v) {
    for (auto n : paths_[v]) axpy(1.0, params_.row(n), values_.row(v));
  }
}

void AxisTable::add_to_value(std::size_t value, double alpha, std::span<const double> delta) {
  if (!composed()) {
    axpy(alpha, delta, params_.row(value));
    axpy(alpha, delta, values_.row(value));
    return;
  }
  for (auto n : paths_[value]) axpy(alpha, delta, params_.row(n));
  refresh();
}

void AxisTable::accumulate_gradient(const Matrix& value_grad, Matrix& param_grad) const {
  if (!composed()) {
    for (std::size_t k = 0; k < value_grad.size(); ++k) param_grad.values()[k] += value_grad.values()[k];
    return;
  }
  for (std::size_t v = 0; v < paths_.size(); ++v) {
    for (auto n : paths_[v]) axpy(1.0, value_grad.row(v), param_grad.row(n));
  }
}

double EmbeddingStore::init_scale(std::size_t dim) { return 0.1 / std::sqrt(static_cast<double>(dim)); }

EmbeddingStore EmbeddingStore::create(const AttributeSpace& space, const Catalog& catalog,
                                      std::size_t dim, std::size_t num_users,
                                      bool hierarchical_category, Rng& rng) {
  if (dim == 0) throw std::invalid_argument("embedding dimension must be positive");
  EmbeddingStore store;
  store.dim_ = dim;
  const double scale = init_scale(dim);
  for (const auto& axis : space.axes()) {
    if (axis.kind == AxisKind::Category && hierarchical_category) {
      std::vector<std::vector<std::uint32_t>> paths;
      for (std::size_t leaf = 0; leaf < catalog.num_category_leaves(); ++leaf) {
        auto p = catalog.category_leaf_path(leaf);
        paths.emplace_back(p.begin(), p.end());
      }
      store.axes_.emplace_back(std::move(paths), catalog.num_category_nodes(), dim);
    } else {
      store.axes_.emplace_back(axis.size, dim);
    }
    fill_uniform(store.axes_.back().parameters().values(), scale, rng);
    store.axes_.back().refresh();
  }
  store.users_ = Matrix(num_users, dim);
  fill_uniform(store.users_.values(), scale, rng);
  return store;
}

std::size_t EmbeddingStore::parameter_count() const {
  std::size_t n = users_.size();
  for (const auto& a : axes_) n += a.parameters().size();
  return n;
}

void EmbeddingStore::refresh() {
  for (auto& a : axes_) a.refresh();
}

AxisScore axis_scores(std::span<const double> context, const AxisTable& table,
                      ScoreNormalization normalization) {
  const std::size_t n = table.vocabulary_size();
  AxisScore s;
  s.probabilities.resize(n);
  s.log_probabilities.resize(n);
  if (normalization == ScoreNormalization::Sigmoid) {
    for (std::size_t v = 0; v < n; ++v) {
      const double p = sigmoid(dot(context, table.vector(v)));
      s.probabilities[v] = p;
      s.log_probabilities[v] = std::log(std::max(p, kProbabilityFloor));
    }
    return s;
  }
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < n; ++v) {
    s.log_probabilities[v] = dot(context, table.vector(v));
    max_logit = std::max(max_logit, s.log_probabilities[v]);
  }
  double total = 0.0;
  for (std::size_t v = 0; v < n; ++v) total += std::exp(s.log_probabilities[v] - max_logit);
  const double log_z = max_logit + std::log(total);
  for (std::size_t v = 0; v < n; ++v) {
    const double lp = s.log_probabilities[v] - log_z;
    s.probabilities[v] = std::exp(lp);
    s.log_probabilities[v] = std::max(lp, kLogFloor);
  }
  return s;
}

double item_score(std::span<const double> context, ItemIndex item, const Allocation& allocation,
                  const EmbeddingStore& store, ScoreNormalization normalization) {
  if (item >= allocation.num_items()) {
    throw std::out_of_range("item " + std::to_string(item) + " is not allocated");
  }
  double score = 1.0;
  for (std::size_t a = 0; a < store.num_axes(); ++a) {
    score *= axis_scores(context, store.axis(a), normalization).probabilities[allocation.coordinate(item, a)];
  }
  return score;
}

void LossGradients::reset(const EmbeddingStore& store, std::size_t batch) {
  loss = 0.0;
  axes.resize(store.num_axes());
  for (std::size_t a = 0; a < store.num_axes(); ++a) {
    const auto& p = store.axis(a).parameters();
    if (axes[a].rows() != p.rows() || axes[a].cols() != p.cols()) axes[a] = Matrix(p.rows(), p.cols());
    else axes[a].fill(0.0);
  }
  if (contexts.rows() != batch || contexts.cols() != store.dim()) contexts = Matrix(batch, store.dim());
  else contexts.fill(0.0);
}

void loss_and_gradients(std::span<const ContextItem> batch, const Allocation& allocation,
                        const EmbeddingStore& store, ScoreNormalization normalization,
                        LossGradients& out) {
  out.reset(store, batch.size());
  std::vector<Matrix> value_grads(store.num_axes());
  for (std::size_t a = 0; a < store.num_axes(); ++a) {
    value_grads[a] = Matrix(store.axis(a).vocabulary_size(), store.dim());
  }
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& pair = batch[b];
    auto ctx_grad = out.contexts.row(b);
    for (std::size_t a = 0; a < store.num_axes(); ++a) {
      const auto& table = store.axis(a);
      const auto target = allocation.coordinate(pair.item, a);
      if (normalization == ScoreNormalization::Sigmoid) {
        const double p = sigmoid(dot(pair.context, table.vector(target)));
        out.loss -= std::log(std::max(p, kProbabilityFloor));
        const double dz = -(1.0 - p);
        axpy(dz, table.vector(target), ctx_grad);
        axpy(dz, pair.context, value_grads[a].row(target));
        continue;
      }
      const auto score = axis_scores(pair.context, table, normalization);
      out.loss -= score.log_probabilities[target];
      for (std::size_t v = 0; v < table.vocabulary_size(); ++v) {
        const double dz = score.probabilities[v] - (v == target ? 1.0 : 0.0);
        if (dz == 0.0) continue;
        axpy(dz, table.vector(v), ctx_grad);
        axpy(dz, pair.context, value_grads[a].row(v));
      }
    }
  }
  for (std::size_t a = 0; a < store.num_axes(); ++a) {
    store.axis(a).accumulate_gradient(value_grads[a], out.axes[a]);
  }
}

void sgd_step(EmbeddingStore& store, const LossGradients& gradients, double learning_rate,
              double weight_decay) {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  for (std::size_t a = 0; a < store.num_axes(); ++a) {
    for (double g : gradients.axes[a].values()) {
      if (!std::isfinite(g)) {
        throw NumericalError("non-finite gradient on axis " + std::to_string(a) +
                             " (loss " + std::to_string(gradients.loss) + ")");
      }
    }
  }
  for (std::size_t a = 0; a < store.num_axes(); ++a) {
    auto& params = store.axis(a).parameters().values();
    const auto& grad = gradients.axes[a].values();
    for (std::size_t k = 0; k < params.size(); ++k) {
      params[k] -= learning_rate * (grad[k] + weight_decay * params[k]);
    }
    store.axis(a).refresh();
  }
}

double learning_rate_at(std::size_t epoch, double initial, std::size_t halving_period) {
  if (halving_period == 0) return initial;
  return initial * std::pow(0.5, static_cast<double>(epoch / halving_period));
}

std::vector<double> category_vector(const AxisTable& category_axis,
                                    std::span<const std::uint32_t> node_path) {
  return category_axis.compose(node_path);
}

}  // namespace dirrec
