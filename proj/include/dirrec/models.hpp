#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dirrec/allocation.hpp"
#include "dirrec/catalog.hpp"
#include "dirrec/embedding.hpp"
#include "dirrec/lstm.hpp"

namespace dirrec {

enum class ModelKind { DirMf, DirRnn, BprMf, AugmentedMf, AugmentedRnn };

std::string to_string(ModelKind k);
ModelKind parse_model_kind(const std::string& name);
bool is_dir_model(ModelKind k);

/// Which held-out purchase a score is for. Sequential models consume the
/// validation purchase before scoring the test purchase.
enum class ScoreTarget { Validation, Test };

struct ModelConfig {
  ModelKind kind = ModelKind::DirMf;
  std::size_t dim = 50;
  ScoreNormalization normalization = ScoreNormalization::Softmax;
  RnnCell cell = RnnCell::Lstm;
  bool hierarchical_category = true;
  double bpr_lambda = 0.01;
  double weight_decay = 0.0;
  SpaceOptions space;
};

struct ParameterTable {
  std::string name;
  Matrix* matrix = nullptr;
};

/// A trainable scorer over the catalog's items.
class Recommender {
 public:
  virtual ~Recommender() = default;

  virtual ModelKind kind() const = 0;
  virtual std::unique_ptr<Recommender> clone() const = 0;

  /// One shuffled SGD pass over the training split; returns the summed loss.
  virtual double train_epoch(const Catalog& catalog, double learning_rate, Rng& rng) = 0;

  /// x_{u,q} for every item.
  virtual void score_items(const Catalog& catalog, UserIndex user, ScoreTarget target,
                           std::span<double> out) const = 0;

  /// Loss over one user's training data with gradients aligned to
  /// parameter_tables(). Pairwise models draw negatives from `negative_seed`.
  virtual double user_loss(const Catalog& catalog, UserIndex user, std::uint64_t negative_seed,
                           std::vector<Matrix>* gradients) const = 0;

  /// Every learnable table in a fixed order.
  virtual std::vector<ParameterTable> parameter_tables() = 0;
  /// Rebuilds derived caches after tables were overwritten.
  virtual void refresh() = 0;

  std::size_t parameter_count();
};

/// One train purchase scored from a frozen context row.
struct ContextEvent {
  std::uint32_t context = 0;
  ItemIndex item = 0;
};

/// Context vectors computed once with all parameters fixed.
struct FrozenContexts {
  Matrix contexts;
  std::vector<ContextEvent> events;
};

/// Common state of the disentangled heads: the attribute space, the allocation
/// and the attribute vectors.
class DirModel : public Recommender {
 public:
  const AttributeSpace& space() const { return space_; }
  const Allocation& allocation() const { return allocation_; }
  void set_allocation(Allocation allocation);
  EmbeddingStore& store() { return store_; }
  const EmbeddingStore& store() const { return store_; }
  ScoreNormalization normalization() const { return normalization_; }

  /// Training contexts and the purchases they score.
  virtual FrozenContexts training_contexts(const Catalog& catalog) const = 0;
  /// The vector u (or u_t) used to score a held-out purchase.
  virtual std::vector<double> scoring_context(const Catalog& catalog, UserIndex user,
                                              ScoreTarget target) const = 0;

  void score_items(const Catalog& catalog, UserIndex user, ScoreTarget target,
                   std::span<double> out) const override;

  /// Per-axis probabilities for a user, one entry per axis.
  std::vector<AxisScore> axis_breakdown(const Catalog& catalog, UserIndex user, ScoreTarget target) const;

  /// Full training loss J with the current parameters and allocation.
  double training_loss(const Catalog& catalog) const;

 protected:
  DirModel(AttributeSpace space, Allocation allocation, EmbeddingStore store,
           ScoreNormalization normalization, double weight_decay);

  AttributeSpace space_;
  Allocation allocation_;
  EmbeddingStore store_;
  ScoreNormalization normalization_;
  double weight_decay_;
};

/// J = -Σ_events Σ_axes ln p_axis(coordinate) from frozen contexts.
double frozen_loss(const FrozenContexts& frozen, const Allocation& allocation, const EmbeddingStore& store,
                   ScoreNormalization normalization);

/// R-step evidence for every implicit axis from frozen contexts.
std::vector<ImplicitEvidence> implicit_evidence(const FrozenContexts& frozen, const AttributeSpace& space,
                                                const EmbeddingStore& store,
                                                ScoreNormalization normalization);

/// DIR-MF: a static user vector is the context for every axis.
class DirMf final : public DirModel {
 public:
  DirMf(AttributeSpace space, Allocation allocation, EmbeddingStore store,
        ScoreNormalization normalization = ScoreNormalization::Softmax, double weight_decay = 0.0);

  ModelKind kind() const override { return ModelKind::DirMf; }
  std::unique_ptr<Recommender> clone() const override { return std::make_unique<DirMf>(*this); }

  std::span<const double> context(UserIndex user) const;

  /// SGD update on one (user, item) pair; returns the pair's loss.
  double sgd_pair(UserIndex user, ItemIndex item, double learning_rate);

  double train_epoch(const Catalog& catalog, double learning_rate, Rng& rng) override;
  double user_loss(const Catalog& catalog, UserIndex user, std::uint64_t negative_seed,
                   std::vector<Matrix>* gradients) const override;
  FrozenContexts training_contexts(const Catalog& catalog) const override;
  std::vector<double> scoring_context(const Catalog& catalog, UserIndex user,
                                      ScoreTarget target) const override;
  std::vector<ParameterTable> parameter_tables() override;
  void refresh() override { store_.refresh(); }

 private:
  LossGradients workspace_;
};

/// [e¹; …; eᴺ; i] for an item.
std::vector<double> dir_item_input(ItemIndex item, const Allocation& allocation, const EmbeddingStore& store);

RecurrentCell::State rnn_step(const RecurrentCell& cell, const RecurrentCell::State& previous, ItemIndex item,
                              const Allocation& allocation, const EmbeddingStore& store);

struct RnnLoss {
  double loss = 0.0;
  bool skipped = false;
  LossGradients embedding;
  CellGradients cell;
};

/// The state after items < t predicts item t, for t ≥ 1; full BPTT. Sequences
/// shorter than two are skipped.
RnnLoss rnn_unroll_loss(const RecurrentCell& cell, std::span<const ItemIndex> sequence,
                        const Allocation& allocation, const EmbeddingStore& store,
                        ScoreNormalization normalization);

/// DIR-RNN: the recurrent state over the purchase sequence is the context.
class DirRnn final : public DirModel {
 public:
  DirRnn(AttributeSpace space, Allocation allocation, EmbeddingStore store, RecurrentCell cell,
         ScoreNormalization normalization = ScoreNormalization::Softmax, double weight_decay = 0.0);

  ModelKind kind() const override { return ModelKind::DirRnn; }
  std::unique_ptr<Recommender> clone() const override { return std::make_unique<DirRnn>(*this); }

  const RecurrentCell& cell() const { return cell_; }
  RecurrentCell& cell() { return cell_; }

  double train_epoch(const Catalog& catalog, double learning_rate, Rng& rng) override;
  double user_loss(const Catalog& catalog, UserIndex user, std::uint64_t negative_seed,
                   std::vector<Matrix>* gradients) const override;
  FrozenContexts training_contexts(const Catalog& catalog) const override;
  std::vector<double> scoring_context(const Catalog& catalog, UserIndex user,
                                      ScoreTarget target) const override;
  std::vector<ParameterTable> parameter_tables() override;
  void refresh() override { store_.refresh(); }

 private:
  RecurrentCell cell_;
};

/// Per-item latent vectors, optionally concatenated with explicit attribute
/// vectors (augmented representation: item vector first, then axes in order).
class EntangledItems {
 public:
  EntangledItems() = default;
  EntangledItems(const Catalog& catalog, std::span<const ExplicitAttribute> attributes, std::size_t dim,
                 bool hierarchical_category, Rng& rng);

  std::size_t dim() const { return items_.cols(); }
  std::size_t representation_dim() const { return dim() * (1 + attributes_.size()); }
  std::size_t num_attributes() const { return attributes_.size(); }

  std::vector<double> representation(ItemIndex q) const;
  void representations(Matrix& out) const;

  Matrix& items() { return items_; }
  const Matrix& items() const { return items_; }
  AxisTable& attribute(std::size_t k) { return attributes_[k]; }
  const AxisTable& attribute(std::size_t k) const { return attributes_[k]; }
  std::uint32_t coordinate(ItemIndex q, std::size_t k) const { return coords_[q * attributes_.size() + k]; }

  /// Adds a representation gradient to the item row and the attribute value
  /// gradients (vocabulary-shaped, one per attribute).
  void scatter(ItemIndex q, std::span<const double> grad, Matrix& item_grad,
               std::vector<Matrix>& attribute_value_grads) const;

  void refresh();

 private:
  Matrix items_;
  std::vector<AxisTable> attributes_;
  std::vector<std::uint32_t> coords_;  // item-major explicit coordinates
};

/// Items not bought by the user in the training split, sampled uniformly.
ItemIndex sample_negative(const Catalog& catalog, std::span<const ItemIndex> sorted_train_items, Rng& rng);

/// BPR-MF (no attributes) and Augmented-MF, trained with the pairwise loss
/// -ln σ(x_up - x_un) + λ/2 (|u|² + |q_p|² + |q_n|²) on raw dot products.
class EntangledMf final : public Recommender {
 public:
  EntangledMf(ModelKind kind, const Catalog& catalog, std::span<const ExplicitAttribute> attributes,
              std::size_t dim, bool hierarchical_category, double lambda, Rng& rng);

  ModelKind kind() const override { return kind_; }
  std::unique_ptr<Recommender> clone() const override { return std::make_unique<EntangledMf>(*this); }

  Matrix& users() { return users_; }
  const EntangledItems& items() const { return items_; }
  double lambda() const { return lambda_; }

  /// One BPR update; returns the pair's loss before the update.
  double bpr_step(UserIndex user, ItemIndex positive, ItemIndex negative, double learning_rate);

  double train_epoch(const Catalog& catalog, double learning_rate, Rng& rng) override;
  void score_items(const Catalog& catalog, UserIndex user, ScoreTarget target,
                   std::span<double> out) const override;
  double user_loss(const Catalog& catalog, UserIndex user, std::uint64_t negative_seed,
                   std::vector<Matrix>* gradients) const override;
  std::vector<ParameterTable> parameter_tables() override;
  void refresh() override { items_.refresh(); }

 private:
  // Loss of one triple; accumulates into gradients aligned with parameter_tables().
  double triple_loss(UserIndex user, ItemIndex positive, ItemIndex negative,
                     std::vector<Matrix>* gradients) const;

  ModelKind kind_;
  Matrix users_;
  EntangledItems items_;
  double lambda_;
};

/// Augmented-RNN: the recurrent cell consumes augmented item representations
/// (hidden size = representation size) and is trained with a per-step
/// pairwise loss against one sampled negative.
class EntangledRnn final : public Recommender {
 public:
  EntangledRnn(const Catalog& catalog, std::span<const ExplicitAttribute> attributes, std::size_t dim,
               bool hierarchical_category, RnnCell cell_type, double lambda, Rng& rng);

  ModelKind kind() const override { return ModelKind::AugmentedRnn; }
  std::unique_ptr<Recommender> clone() const override { return std::make_unique<EntangledRnn>(*this); }

  const RecurrentCell& cell() const { return cell_; }

  double train_epoch(const Catalog& catalog, double learning_rate, Rng& rng) override;
  void score_items(const Catalog& catalog, UserIndex user, ScoreTarget target,
                   std::span<double> out) const override;
  double user_loss(const Catalog& catalog, UserIndex user, std::uint64_t negative_seed,
                   std::vector<Matrix>* gradients) const override;
  std::vector<ParameterTable> parameter_tables() override;
  void refresh() override { items_.refresh(); }

 private:
  EntangledItems items_;
  RecurrentCell cell_;
  double lambda_;
};

/// Builds a freshly initialized model. DIR heads start from a random
/// allocation drawn from `seed`.
std::unique_ptr<Recommender> create_model(const ModelConfig& config, const Catalog& catalog,
                                          std::uint64_t seed);

/// Items of a user's training split, or of the training split plus the
/// validation purchase for test scoring.
std::vector<ItemIndex> history(const Catalog& catalog, UserIndex user, ScoreTarget target);

}  // namespace dirrec
