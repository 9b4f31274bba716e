#include "dirrec/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

namespace dirrec {
namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// -ln σ(x), stable for large |x|.
double softplus_neg(double x) { return x > 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x)); }

std::vector<ItemIndex> sorted_train_items(const Catalog& catalog, UserIndex u) {
  std::vector<ItemIndex> items;
  for (const auto& p : catalog.train(u)) items.push_back(p.item);
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  return items;
}

std::vector<ItemIndex> train_sequence(const Catalog& catalog, UserIndex u) {
  std::vector<ItemIndex> seq;
  for (const auto& p : catalog.train(u)) seq.push_back(p.item);
  return seq;
}

AxisTable make_attribute_table(const Catalog& catalog, ExplicitAttribute attr, std::size_t dim,
                               bool hierarchical) {
  if (attr == ExplicitAttribute::Category) {
    if (!hierarchical) return AxisTable(catalog.num_category_leaves(), dim);
    std::vector<std::vector<std::uint32_t>> paths;
    for (std::size_t leaf = 0; leaf < catalog.num_category_leaves(); ++leaf) {
      auto p = catalog.category_leaf_path(leaf);
      paths.emplace_back(p.begin(), p.end());
    }
    return AxisTable(std::move(paths), catalog.num_category_nodes(), dim);
  }
  return AxisTable(kMissingPriceBucket + 1, dim);
}

std::vector<Matrix> value_gradients(const EntangledItems& items) {
  std::vector<Matrix> out;
  for (std::size_t k = 0; k < items.num_attributes(); ++k) {
    out.emplace_back(items.attribute(k).vocabulary_size(), items.dim());
  }
  return out;
}

void check_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericalError(std::string("non-finite gradient in ") + what);
  }
}

}  // namespace

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::DirMf: return "dir-mf";
    case ModelKind::DirRnn: return "dir-rnn";
    case ModelKind::BprMf: return "bpr-mf";
    case ModelKind::AugmentedMf: return "augmented-mf";
    case ModelKind::AugmentedRnn: return "augmented-rnn";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
  for (auto k : {ModelKind::DirMf, ModelKind::DirRnn, ModelKind::BprMf, ModelKind::AugmentedMf,
                 ModelKind::AugmentedRnn}) {
    if (to_string(k) == name) return k;
  }
  throw InputError("unknown model '" + name + "'");
}

bool is_dir_model(ModelKind k) { return k == ModelKind::DirMf || k == ModelKind::DirRnn; }

std::size_t Recommender::parameter_count() {
  std::size_t n = 0;
  for (const auto& t : parameter_tables()) n += t.matrix->size();
  return n;
}

std::vector<ItemIndex> history(const Catalog& catalog, UserIndex user, ScoreTarget target) {
  auto seq = train_sequence(catalog, user);
  if (target == ScoreTarget::Test) seq.push_back(catalog.validation(user).item);
  return seq;
}

// ---- DIR heads -------------------------------------------------------------

DirModel::DirModel(AttributeSpace space, Allocation allocation, EmbeddingStore store,
                   ScoreNormalization normalization, double weight_decay)
    : space_(std::move(space)),
      allocation_(std::move(allocation)),
      store_(std::move(store)),
      normalization_(normalization),
      weight_decay_(weight_decay) {
  allocation_.validate(space_);
  if (store_.num_axes() != space_.num_axes()) {
    throw std::invalid_argument("embedding store does not match the attribute space");
  }
}

void DirModel::set_allocation(Allocation allocation) {
  allocation.validate(space_);
  allocation_ = std::move(allocation);
}

std::vector<AxisScore> DirModel::axis_breakdown(const Catalog& catalog, UserIndex user,
                                                ScoreTarget target) const {
  const auto ctx = scoring_context(catalog, user, target);
  std::vector<AxisScore> out;
  for (std::size_t a = 0; a < store_.num_axes(); ++a) {
    out.push_back(axis_scores(ctx, store_.axis(a), normalization_));
  }
  return out;
}

void DirModel::score_items(const Catalog& catalog, UserIndex user, ScoreTarget target,
                           std::span<double> out) const {
  const auto breakdown = axis_breakdown(catalog, user, target);
  for (std::size_t q = 0; q < allocation_.num_items(); ++q) {
    double s = 1.0;
    for (std::size_t a = 0; a < breakdown.size(); ++a) {
      s *= breakdown[a].probabilities[allocation_.coordinate(static_cast<ItemIndex>(q), a)];
    }
    out[q] = s;
  }
}

double DirModel::training_loss(const Catalog& catalog) const {
  return frozen_loss(training_contexts(catalog), allocation_, store_, normalization_);
}

double frozen_loss(const FrozenContexts& frozen, const Allocation& allocation, const EmbeddingStore& store,
                   ScoreNormalization normalization) {
  const std::size_t rows = frozen.contexts.rows();
  std::vector<std::vector<std::vector<double>>> logp(rows);
  std::vector<char> needed(rows, 0);
  for (const auto& e : frozen.events) needed[e.context] = 1;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!needed[r]) continue;
    for (std::size_t a = 0; a < store.num_axes(); ++a) {
      logp[r].push_back(axis_scores(frozen.contexts.row(r), store.axis(a), normalization).log_probabilities);
    }
  }
  double loss = 0.0;
  for (const auto& e : frozen.events) {
    for (std::size_t a = 0; a < store.num_axes(); ++a) {
      loss -= logp[e.context][a][allocation.coordinate(e.item, a)];
    }
  }
  return loss;
}

std::vector<ImplicitEvidence> implicit_evidence(const FrozenContexts& frozen, const AttributeSpace& space,
                                                const EmbeddingStore& store,
                                                ScoreNormalization normalization) {
  std::vector<std::vector<std::uint32_t>> contexts_of_item(space.num_items());
  for (const auto& e : frozen.events) contexts_of_item[e.item].push_back(e.context);
  std::vector<ImplicitEvidence> out;
  for (std::size_t m = 0; m < space.num_implicit(); ++m) {
    const auto& table = store.axis(space.num_explicit() + m);
    ImplicitEvidence ev;
    ev.log_probs = Matrix(frozen.contexts.rows(), table.vocabulary_size());
    for (std::size_t r = 0; r < frozen.contexts.rows(); ++r) {
      const auto s = axis_scores(frozen.contexts.row(r), table, normalization);
      std::copy(s.log_probabilities.begin(), s.log_probabilities.end(), ev.log_probs.row(r).begin());
    }
    ev.contexts_of_item = contexts_of_item;
    out.push_back(std::move(ev));
  }
  return out;
}

DirMf::DirMf(AttributeSpace space, Allocation allocation, EmbeddingStore store,
             ScoreNormalization normalization, double weight_decay)
    : DirModel(std::move(space), std::move(allocation), std::move(store), normalization, weight_decay) {}

std::span<const double> DirMf::context(UserIndex user) const {
  if (user >= store_.users().rows()) throw std::out_of_range("unknown user " + std::to_string(user));
  return store_.users().row(user);
}

double DirMf::sgd_pair(UserIndex user, ItemIndex item, double learning_rate) {
  const ContextItem pair{context(user), item};
  loss_and_gradients(std::span(&pair, 1), allocation_, store_, normalization_, workspace_);
  const auto dc = workspace_.contexts.row(0);
  check_finite(dc, "user vector");
  sgd_step(store_, workspace_, learning_rate, weight_decay_);
  auto u = store_.users().row(user);
  for (std::size_t k = 0; k < u.size(); ++k) u[k] -= learning_rate * (dc[k] + weight_decay_ * u[k]);
  return workspace_.loss;
}

double DirMf::train_epoch(const Catalog& catalog, double learning_rate, Rng& rng) {
  std::vector<std::pair<UserIndex, ItemIndex>> pairs;
  for (UserIndex u = 0; u < catalog.num_users(); ++u) {
    for (const auto& p : catalog.train(u)) pairs.emplace_back(u, p.item);
  }
  std::shuffle(pairs.begin(), pairs.end(), rng);
  double total = 0.0;
  for (const auto& [u, q] : pairs) total += sgd_pair(u, q, learning_rate);
  return total;
}

double DirMf::user_loss(const Catalog& catalog, UserIndex user, std::uint64_t,
                        std::vector<Matrix>* gradients) const {
  std::vector<ContextItem> batch;
  for (const auto& p : catalog.train(user)) batch.push_back({context(user), p.item});
  LossGradients g;
  loss_and_gradients(batch, allocation_, store_, normalization_, g);
  if (gradients) {
    gradients->clear();
    for (auto& m : g.axes) gradients->push_back(std::move(m));
    Matrix du(store_.users().rows(), store_.dim());
    for (std::size_t b = 0; b < batch.size(); ++b) axpy(1.0, g.contexts.row(b), du.row(user));
    gradients->push_back(std::move(du));
  }
  return g.loss;
}

FrozenContexts DirMf::training_contexts(const Catalog& catalog) const {
  FrozenContexts f;
  f.contexts = store_.users();
  for (UserIndex u = 0; u < catalog.num_users(); ++u) {
    for (const auto& p : catalog.train(u)) f.events.push_back({u, p.item});
  }
  return f;
}

std::vector<double> DirMf::scoring_context(const Catalog&, UserIndex user, ScoreTarget) const {
  const auto c = context(user);
  return {c.begin(), c.end()};
}

std::vector<ParameterTable> DirMf::parameter_tables() {
  std::vector<ParameterTable> t;
  for (std::size_t a = 0; a < store_.num_axes(); ++a) {
    t.push_back({"axis/" + space_.axis(a).name, &store_.axis(a).parameters()});
  }
  t.push_back({"users", &store_.users()});
  return t;
}

std::vector<double> dir_item_input(ItemIndex item, const Allocation& allocation, const EmbeddingStore& store) {
  std::vector<double> x;
  x.reserve(store.num_axes() * store.dim());
  for (std::size_t a = 0; a < store.num_axes(); ++a) {
    const auto v = store.axis(a).vector(allocation.coordinate(item, a));
    x.insert(x.end(), v.begin(), v.end());
  }
  return x;
}

RecurrentCell::State rnn_step(const RecurrentCell& cell, const RecurrentCell::State& previous, ItemIndex item,
                              const Allocation& allocation, const EmbeddingStore& store) {
  return cell.step(previous, dir_item_input(item, allocation, store));
}

RnnLoss rnn_unroll_loss(const RecurrentCell& cell, std::span<const ItemIndex> sequence,
                        const Allocation& allocation, const EmbeddingStore& store,
                        ScoreNormalization normalization) {
  RnnLoss out;
  out.cell.reset(cell.gate_rows(), cell.input_dim(), cell.hidden_dim());
  if (sequence.size() < 2) {
    spdlog::warn("skipping sequence of length {} (nothing to predict)", sequence.size());
    out.skipped = true;
    out.embedding.reset(store, 0);
    return out;
  }
  const std::size_t steps = sequence.size() - 1;
  std::vector<std::vector<double>> inputs;
  for (std::size_t k = 0; k < steps; ++k) inputs.push_back(dir_item_input(sequence[k], allocation, store));
  const auto trace = cell.forward(inputs);

  std::vector<ContextItem> batch;
  for (std::size_t k = 0; k < steps; ++k) batch.push_back({trace[k].h, sequence[k + 1]});
  loss_and_gradients(batch, allocation, store, normalization, out.embedding);
  out.loss = out.embedding.loss;

  Matrix dx;
  cell.backward(trace, out.embedding.contexts, out.cell, dx);

  const std::size_t d = store.dim();
  for (std::size_t a = 0; a < store.num_axes(); ++a) {
    Matrix value_grad(store.axis(a).vocabulary_size(), d);
    for (std::size_t k = 0; k < steps; ++k) {
      axpy(1.0, dx.row(k).subspan(a * d, d), value_grad.row(allocation.coordinate(sequence[k], a)));
    }
    store.axis(a).accumulate_gradient(value_grad, out.embedding.axes[a]);
  }
  return out;
}

DirRnn::DirRnn(AttributeSpace space, Allocation allocation, EmbeddingStore store, RecurrentCell cell,
               ScoreNormalization normalization, double weight_decay)
    : DirModel(std::move(space), std::move(allocation), std::move(store), normalization, weight_decay),
      cell_(std::move(cell)) {
  if (cell_.input_dim() != store_.num_axes() * store_.dim() || cell_.hidden_dim() != store_.dim()) {
    throw std::invalid_argument("recurrent cell does not match the embedding store");
  }
}

double DirRnn::train_epoch(const Catalog& catalog, double learning_rate, Rng& rng) {
  std::vector<UserIndex> users(catalog.num_users());
  std::iota(users.begin(), users.end(), 0);
  std::shuffle(users.begin(), users.end(), rng);
  double total = 0.0;
  for (auto u : users) {
    const auto seq = train_sequence(catalog, u);
    auto r = rnn_unroll_loss(cell_, seq, allocation_, store_, normalization_);
    if (r.skipped) continue;
    total += r.loss;
    cell_.apply(r.cell, learning_rate, weight_decay_);
    sgd_step(store_, r.embedding, learning_rate, weight_decay_);
  }
  return total;
}

double DirRnn::user_loss(const Catalog& catalog, UserIndex user, std::uint64_t,
                         std::vector<Matrix>* gradients) const {
  const auto seq = train_sequence(catalog, user);
  auto r = rnn_unroll_loss(cell_, seq, allocation_, store_, normalization_);
  if (gradients) {
    gradients->clear();
    for (auto& m : r.embedding.axes) gradients->push_back(std::move(m));
    gradients->push_back(std::move(r.cell.input_weights));
    gradients->push_back(std::move(r.cell.recurrent_weights));
    gradients->push_back(std::move(r.cell.bias));
  }
  return r.loss;
}

FrozenContexts DirRnn::training_contexts(const Catalog& catalog) const {
  std::vector<std::vector<double>> rows;
  FrozenContexts f;
  for (UserIndex u = 0; u < catalog.num_users(); ++u) {
    const auto seq = train_sequence(catalog, u);
    auto state = cell_.initial_state();
    for (std::size_t k = 0; k + 1 < seq.size(); ++k) {
      state = rnn_step(cell_, state, seq[k], allocation_, store_);
      f.events.push_back({static_cast<std::uint32_t>(rows.size()), seq[k + 1]});
      rows.push_back(state.h);
    }
  }
  f.contexts = Matrix(rows.size(), store_.dim());
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), f.contexts.row(r).begin());
  return f;
}

std::vector<double> DirRnn::scoring_context(const Catalog& catalog, UserIndex user, ScoreTarget target) const {
  if (user >= catalog.num_users()) throw std::out_of_range("unknown user " + std::to_string(user));
  auto state = cell_.initial_state();
  for (auto q : history(catalog, user, target)) state = rnn_step(cell_, state, q, allocation_, store_);
  return state.h;
}

std::vector<ParameterTable> DirRnn::parameter_tables() {
  std::vector<ParameterTable> t;
  for (std::size_t a = 0; a < store_.num_axes(); ++a) {
    t.push_back({"axis/" + space_.axis(a).name, &store_.axis(a).parameters()});
  }
  t.push_back({"rnn/w_in", &cell_.input_weights()});
  t.push_back({"rnn/w_rec", &cell_.recurrent_weights()});
  t.push_back({"rnn/bias", &cell_.bias()});
  return t;
}

// ---- entangled baselines ---------------------------------------------------

EntangledItems::EntangledItems(const Catalog& catalog, std::span<const ExplicitAttribute> attributes,
                               std::size_t dim, bool hierarchical_category, Rng& rng)
    : items_(catalog.num_items(), dim), coords_(explicit_coordinates(catalog, attributes)) {
  const double scale = EmbeddingStore::init_scale(dim);
  fill_uniform(items_.values(), scale, rng);
  for (auto attr : attributes) {
    attributes_.push_back(make_attribute_table(catalog, attr, dim, hierarchical_category));
    fill_uniform(attributes_.back().parameters().values(), scale, rng);
    attributes_.back().refresh();
  }
}

std::vector<double> EntangledItems::representation(ItemIndex q) const {
  std::vector<double> r;
  r.reserve(representation_dim());
  const auto own = items_.row(q);
  r.insert(r.end(), own.begin(), own.end());
  for (std::size_t k = 0; k < attributes_.size(); ++k) {
    const auto v = attributes_[k].vector(coords_[q * attributes_.size() + k]);
    r.insert(r.end(), v.begin(), v.end());
  }
  return r;
}

void EntangledItems::representations(Matrix& out) const {
  out = Matrix(items_.rows(), representation_dim());
  for (std::size_t q = 0; q < items_.rows(); ++q) {
    const auto r = representation(static_cast<ItemIndex>(q));
    std::copy(r.begin(), r.end(), out.row(q).begin());
  }
}

void EntangledItems::scatter(ItemIndex q, std::span<const double> grad, Matrix& item_grad,
                             std::vector<Matrix>& attribute_value_grads) const {
  const std::size_t d = dim();
  axpy(1.0, grad.subspan(0, d), item_grad.row(q));
  for (std::size_t k = 0; k < attributes_.size(); ++k) {
    axpy(1.0, grad.subspan((k + 1) * d, d),
         attribute_value_grads[k].row(coords_[q * attributes_.size() + k]));
  }
}

void EntangledItems::refresh() {
  for (auto& a : attributes_) a.refresh();
}

ItemIndex sample_negative(const Catalog& catalog, std::span<const ItemIndex> sorted_train_items, Rng& rng) {
  const std::size_t n = catalog.num_items();
  if (n == 0) throw std::invalid_argument("cannot sample a negative from an empty catalog");
  std::uniform_int_distribution<ItemIndex> pick(0, static_cast<ItemIndex>(n - 1));
  if (sorted_train_items.size() >= n) return pick(rng);
  for (;;) {
    const ItemIndex q = pick(rng);
    if (!std::binary_search(sorted_train_items.begin(), sorted_train_items.end(), q)) return q;
  }
}

EntangledMf::EntangledMf(ModelKind kind, const Catalog& catalog, std::span<const ExplicitAttribute> attributes,
                         std::size_t dim, bool hierarchical_category, double lambda, Rng& rng)
    : kind_(kind), lambda_(lambda) {
  items_ = EntangledItems(catalog, attributes, dim, hierarchical_category, rng);
  users_ = Matrix(catalog.num_users(), items_.representation_dim());
  fill_uniform(users_.values(), EmbeddingStore::init_scale(dim), rng);
}

double EntangledMf::bpr_step(UserIndex user, ItemIndex positive, ItemIndex negative, double learning_rate) {
  const std::size_t d = items_.dim();
  const auto rp = items_.representation(positive);
  const auto rn = items_.representation(negative);
  auto u = users_.row(user);
  const std::vector<double> u_old(u.begin(), u.end());
  const double x = dot(u_old, rp) - dot(u_old, rn);
  const double s = sigmoid(-x);
  const auto ip = items_.items().row(positive);
  const auto in = items_.items().row(negative);
  double loss = softplus_neg(x) + 0.5 * lambda_ * (dot(u_old, u_old) + dot(ip, ip) + dot(in, in));

  std::vector<double> du(u.size()), dp(d), dn(d);
  for (std::size_t k = 0; k < u.size(); ++k) du[k] = -s * (rp[k] - rn[k]) + lambda_ * u_old[k];
  for (std::size_t k = 0; k < d; ++k) {
    dp[k] = -s * u_old[k] + lambda_ * ip[k];
    dn[k] = s * u_old[k] + lambda_ * in[k];
  }
  check_finite(du, "user vector");
  check_finite(dp, "item vector");
  check_finite(dn, "item vector");

  axpy(-learning_rate, du, u);
  if (positive == negative) {
    // Both terms land on the same row.
    std::vector<double> both(d);
    for (std::size_t k = 0; k < d; ++k) both[k] = dp[k] + dn[k];
    axpy(-learning_rate, both, items_.items().row(positive));
  } else {
    axpy(-learning_rate, dp, items_.items().row(positive));
    axpy(-learning_rate, dn, items_.items().row(negative));
  }
  const std::span<const double> uo(u_old);
  for (std::size_t k = 0; k < items_.num_attributes(); ++k) {
    const auto slice = uo.subspan((k + 1) * d, d);
    auto& table = items_.attribute(k);
    table.add_to_value(items_.coordinate(positive, k), learning_rate * s, slice);
    table.add_to_value(items_.coordinate(negative, k), -learning_rate * s, slice);
  }
  return loss;
}

double EntangledMf::triple_loss(UserIndex user, ItemIndex positive, ItemIndex negative,
                                std::vector<Matrix>* gradients) const {
  const std::size_t d = items_.dim();
  const auto rp = items_.representation(positive);
  const auto rn = items_.representation(negative);
  const auto u = users_.row(user);
  const double x = dot(u, rp) - dot(u, rn);
  const auto ip = items_.items().row(positive);
  const auto in = items_.items().row(negative);
  const double loss = softplus_neg(x) + 0.5 * lambda_ * (dot(u, u) + dot(ip, ip) + dot(in, in));
  if (!gradients) return loss;
  const double s = sigmoid(-x);
  auto& g = *gradients;
  auto gu = g[0].row(user);
  for (std::size_t k = 0; k < u.size(); ++k) gu[k] += -s * (rp[k] - rn[k]) + lambda_ * u[k];
  std::vector<double> dp(u.size()), dn(u.size());
  for (std::size_t k = 0; k < u.size(); ++k) {
    dp[k] = -s * u[k];
    dn[k] = s * u[k];
  }
  for (std::size_t k = 0; k < d; ++k) {
    dp[k] += lambda_ * ip[k];
    dn[k] += lambda_ * in[k];
  }
  auto value_grads = value_gradients(items_);
  items_.scatter(positive, dp, g[1], value_grads);
  items_.scatter(negative, dn, g[1], value_grads);
  for (std::size_t k = 0; k < items_.num_attributes(); ++k) {
    items_.attribute(k).accumulate_gradient(value_grads[k], g[2 + k]);
  }
  return loss;
}

double EntangledMf::train_epoch(const Catalog& catalog, double learning_rate, Rng& rng) {
  std::vector<std::pair<UserIndex, ItemIndex>> pairs;
  for (UserIndex u = 0; u < catalog.num_users(); ++u) {
    for (const auto& p : catalog.train(u)) pairs.emplace_back(u, p.item);
  }
  std::shuffle(pairs.begin(), pairs.end(), rng);
  std::vector<std::vector<ItemIndex>> train_items(catalog.num_users());
  for (UserIndex u = 0; u < catalog.num_users(); ++u) train_items[u] = sorted_train_items(catalog, u);
  double total = 0.0;
  for (const auto& [u, q] : pairs) {
    const auto n = sample_negative(catalog, train_items[u], rng);
    total += bpr_step(u, q, n, learning_rate);
  }
  return total;
}

void EntangledMf::score_items(const Catalog&, UserIndex user, ScoreTarget, std::span<double> out) const {
  if (user >= users_.rows()) throw std::out_of_range("unknown user " + std::to_string(user));
  const auto u = users_.row(user);
  for (std::size_t q = 0; q < items_.items().rows(); ++q) {
    out[q] = dot(u, items_.representation(static_cast<ItemIndex>(q)));
  }
}

double EntangledMf::user_loss(const Catalog& catalog, UserIndex user, std::uint64_t negative_seed,
                              std::vector<Matrix>* gradients) const {
  if (gradients) {
    gradients->clear();
    gradients->emplace_back(users_.rows(), users_.cols());
    gradients->emplace_back(items_.items().rows(), items_.items().cols());
    for (std::size_t k = 0; k < items_.num_attributes(); ++k) {
      const auto& p = items_.attribute(k).parameters();
      gradients->emplace_back(p.rows(), p.cols());
    }
  }
  Rng rng(negative_seed);
  const auto train_items = sorted_train_items(catalog, user);
  double loss = 0.0;
  for (const auto& p : catalog.train(user)) {
    const auto n = sample_negative(catalog, train_items, rng);
    loss += triple_loss(user, p.item, n, gradients);
  }
  return loss;
}

std::vector<ParameterTable> EntangledMf::parameter_tables() {
  std::vector<ParameterTable> t{{"users", &users_}, {"items", &items_.items()}};
  for (std::size_t k = 0; k < items_.num_attributes(); ++k) {
    t.push_back({"attribute/" + std::to_string(k), &items_.attribute(k).parameters()});
  }
  return t;
}

EntangledRnn::EntangledRnn(const Catalog& catalog, std::span<const ExplicitAttribute> attributes,
                           std::size_t dim, bool hierarchical_category, RnnCell cell_type, double lambda,
                           Rng& rng)
    : lambda_(lambda) {
  items_ = EntangledItems(catalog, attributes, dim, hierarchical_category, rng);
  const std::size_t D = items_.representation_dim();
  cell_ = RecurrentCell(D, D, cell_type);
  cell_.initialize(EmbeddingStore::init_scale(D), rng);
}

double EntangledRnn::user_loss(const Catalog& catalog, UserIndex user, std::uint64_t negative_seed,
                               std::vector<Matrix>* gradients) const {
  const std::size_t d = items_.dim();
  if (gradients) {
    gradients->clear();
    gradients->emplace_back(items_.items().rows(), d);
    for (std::size_t k = 0; k < items_.num_attributes(); ++k) {
      const auto& p = items_.attribute(k).parameters();
      gradients->emplace_back(p.rows(), p.cols());
    }
    gradients->emplace_back(cell_.gate_rows(), cell_.input_dim());
    gradients->emplace_back(cell_.gate_rows(), cell_.hidden_dim());
    gradients->emplace_back(1, cell_.gate_rows());
  }
  const auto seq = train_sequence(catalog, user);
  if (seq.size() < 2) {
    spdlog::warn("skipping sequence of length {} (nothing to predict)", seq.size());
    return 0.0;
  }
  const std::size_t steps = seq.size() - 1;
  const std::size_t D = items_.representation_dim();
  std::vector<std::vector<double>> inputs;
  for (std::size_t k = 0; k < steps; ++k) inputs.push_back(items_.representation(seq[k]));
  const auto trace = cell_.forward(inputs);

  Rng rng(negative_seed);
  const auto train_items = sorted_train_items(catalog, user);
  Matrix dh(steps, D);
  Matrix item_grad(items_.items().rows(), d);
  auto value_grads = value_gradients(items_);
  double loss = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    const ItemIndex p = seq[k + 1];
    const ItemIndex n = sample_negative(catalog, train_items, rng);
    const auto rp = items_.representation(p);
    const auto rn = items_.representation(n);
    const auto& h = trace[k].h;
    const double x = dot(h, rp) - dot(h, rn);
    const auto ip = items_.items().row(p);
    const auto in = items_.items().row(n);
    loss += softplus_neg(x) + 0.5 * lambda_ * (dot(ip, ip) + dot(in, in));
    if (!gradients) continue;
    const double s = sigmoid(-x);
    std::vector<double> dp(D), dn(D);
    for (std::size_t j = 0; j < D; ++j) {
      dh(k, j) = -s * (rp[j] - rn[j]);
      dp[j] = -s * h[j];
      dn[j] = s * h[j];
    }
    for (std::size_t j = 0; j < d; ++j) {
      dp[j] += lambda_ * ip[j];
      dn[j] += lambda_ * in[j];
    }
    items_.scatter(p, dp, item_grad, value_grads);
    items_.scatter(n, dn, item_grad, value_grads);
  }
  if (!gradients) return loss;

  CellGradients cg;
  cg.reset(cell_.gate_rows(), cell_.input_dim(), cell_.hidden_dim());
  Matrix dx;
  cell_.backward(trace, dh, cg, dx);
  for (std::size_t k = 0; k < steps; ++k) items_.scatter(seq[k], dx.row(k), item_grad, value_grads);

  auto& g = *gradients;
  g[0] = std::move(item_grad);
  for (std::size_t k = 0; k < items_.num_attributes(); ++k) {
    items_.attribute(k).accumulate_gradient(value_grads[k], g[1 + k]);
  }
  const std::size_t c = 1 + items_.num_attributes();
  g[c] = std::move(cg.input_weights);
  g[c + 1] = std::move(cg.recurrent_weights);
  g[c + 2] = std::move(cg.bias);
  return loss;
}

double EntangledRnn::train_epoch(const Catalog& catalog, double learning_rate, Rng& rng) {
  std::vector<UserIndex> users(catalog.num_users());
  std::iota(users.begin(), users.end(), 0);
  std::shuffle(users.begin(), users.end(), rng);
  double total = 0.0;
  std::vector<Matrix> grads;
  for (auto u : users) {
    if (catalog.train(u).size() < 2) continue;
    total += user_loss(catalog, u, rng(), &grads);
    for (const auto& g : grads) check_finite(g.values(), "augmented recurrent model");
    auto tables = parameter_tables();
    for (std::size_t t = 0; t < tables.size(); ++t) {
      axpy(-learning_rate, grads[t].values(), tables[t].matrix->values());
    }
    items_.refresh();
  }
  return total;
}

void EntangledRnn::score_items(const Catalog& catalog, UserIndex user, ScoreTarget target,
                               std::span<double> out) const {
  if (user >= catalog.num_users()) throw std::out_of_range("unknown user " + std::to_string(user));
  auto state = cell_.initial_state();
  for (auto q : history(catalog, user, target)) state = cell_.step(state, items_.representation(q));
  for (std::size_t q = 0; q < items_.items().rows(); ++q) {
    out[q] = dot(state.h, items_.representation(static_cast<ItemIndex>(q)));
  }
}

std::vector<ParameterTable> EntangledRnn::parameter_tables() {
  std::vector<ParameterTable> t{{"items", &items_.items()}};
  for (std::size_t k = 0; k < items_.num_attributes(); ++k) {
    t.push_back({"attribute/" + std::to_string(k), &items_.attribute(k).parameters()});
  }
  t.push_back({"rnn/w_in", &cell_.input_weights()});
  t.push_back({"rnn/w_rec", &cell_.recurrent_weights()});
  t.push_back({"rnn/bias", &cell_.bias()});
  return t;
}

std::unique_ptr<Recommender> create_model(const ModelConfig& config, const Catalog& catalog,
                                          std::uint64_t seed) {
  if (config.dim == 0) throw InputError("embedding dimension must be positive");
  Rng rng(seed);
  const auto& attrs = config.space.explicit_axes;
  switch (config.kind) {
    case ModelKind::DirMf:
    case ModelKind::DirRnn: {
      auto space = AttributeSpace::build(catalog, config.space);
      auto allocation = random_allocation(space, rng());
      const bool mf = config.kind == ModelKind::DirMf;
      auto store = EmbeddingStore::create(space, catalog, config.dim, mf ? catalog.num_users() : 0,
                                          config.hierarchical_category, rng);
      if (mf) {
        return std::make_unique<DirMf>(std::move(space), std::move(allocation), std::move(store),
                                       config.normalization, config.weight_decay);
      }
      RecurrentCell cell(space.num_axes() * config.dim, config.dim, config.cell);
      cell.initialize(EmbeddingStore::init_scale(config.dim), rng);
      return std::make_unique<DirRnn>(std::move(space), std::move(allocation), std::move(store),
                                      std::move(cell), config.normalization, config.weight_decay);
    }
    case ModelKind::BprMf:
      return std::make_unique<EntangledMf>(ModelKind::BprMf, catalog, std::span<const ExplicitAttribute>{},
                                           config.dim, config.hierarchical_category, config.bpr_lambda, rng);
    case ModelKind::AugmentedMf:
      return std::make_unique<EntangledMf>(ModelKind::AugmentedMf, catalog, attrs, config.dim,
                                           config.hierarchical_category, config.bpr_lambda, rng);
    case ModelKind::AugmentedRnn:
      return std::make_unique<EntangledRnn>(catalog, attrs, config.dim, config.hierarchical_category,
                                            config.cell, config.bpr_lambda, rng);
  }
  throw InputError("unknown model kind");
}

}  // namespace dirrec
