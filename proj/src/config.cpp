#include "dirrec/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace dirrec {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& s) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw InputError("'" + s + "' is not a valid number");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw InputError("'" + s + "' is not a boolean");
}

std::vector<std::string> parse_list(std::string s) {
  s = trim(s);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']') throw InputError("unterminated list '" + s + "'");
    s = s.substr(1, s.size() - 2);
  }
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

bool is_rnn(ModelKind k) { return k == ModelKind::DirRnn || k == ModelKind::AugmentedRnn; }

}  // namespace

RunConfig parse_config(std::string_view text, const std::string& source) {
  RunConfig c;
  auto& t = c.train;
  auto& m = t.model;
  bool dim_set = false;
  const std::map<std::string, std::function<void(const std::string&)>> setters{
      {"catalog", [&](const std::string& v) { c.catalog = v; }},
      {"out", [&](const std::string& v) { c.out = v; }},
      {"model", [&](const std::string& v) { m.kind = parse_model_kind(v); }},
      {"dim", [&](const std::string& v) { m.dim = parse_number<std::size_t>(v); dim_set = true; }},
      {"normalization", [&](const std::string& v) { m.normalization = parse_score_normalization(v); }},
      {"cell", [&](const std::string& v) { m.cell = parse_rnn_cell(v); }},
      {"hierarchical_category", [&](const std::string& v) { m.hierarchical_category = parse_bool(v); }},
      {"bpr_lambda", [&](const std::string& v) { m.bpr_lambda = parse_number<double>(v); }},
      {"weight_decay", [&](const std::string& v) { m.weight_decay = parse_number<double>(v); }},
      {"explicit_axes",
       [&](const std::string& v) {
         m.space.explicit_axes.clear();
         for (const auto& a : parse_list(v)) m.space.explicit_axes.push_back(parse_explicit_attribute(a));
       }},
      {"implicit_axes", [&](const std::string& v) { m.space.implicit_axes = parse_number<std::size_t>(v); }},
      {"implicit_multiplier", [&](const std::string& v) { m.space.implicit_multiplier = parse_number<double>(v); }},
      {"learning_rate", [&](const std::string& v) { t.learning_rate = parse_number<double>(v); }},
      {"lr_halving_period", [&](const std::string& v) { t.lr_halving_period = parse_number<std::size_t>(v); }},
      {"patience", [&](const std::string& v) { t.patience = parse_number<std::size_t>(v); }},
      {"min_delta", [&](const std::string& v) { t.min_delta = parse_number<double>(v); }},
      {"max_reallocations", [&](const std::string& v) { t.max_reallocations = parse_number<std::size_t>(v); }},
      {"max_epochs_per_estep", [&](const std::string& v) { t.max_epochs_per_estep = parse_number<std::size_t>(v); }},
      {"seed", [&](const std::string& v) { t.seed = parse_number<std::uint64_t>(v); }},
      {"threads", [&](const std::string& v) { t.threads = parse_number<std::size_t>(v); }},
      {"valid_sample_cap", [&](const std::string& v) { t.valid_sample_cap = parse_number<std::size_t>(v); }},
  };

  std::vector<std::string> errors;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back(where + "expected 'key = value'");
      continue;
    }
    const auto key = trim(std::string_view(line).substr(0, eq));
    const auto value = trim(std::string_view(line).substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) {
      errors.push_back(where + "unknown key '" + key + "'");
      continue;
    }
    if (!seen.insert(key).second) {
      errors.push_back(where + "duplicate key '" + key + "'");
      continue;
    }
    try {
      it->second(value);
    } catch (const std::exception& e) {
      errors.push_back(where + key + ": " + e.what());
    }
  }
  if (!dim_set && is_rnn(m.kind)) m.dim = 90;
  if (c.catalog.empty()) errors.push_back(source + ": 'catalog' is required");
  for (const auto& p : t.problems()) errors.push_back(source + ": " + p);
  if (!errors.empty()) {
    std::string msg = "invalid configuration (" + std::to_string(errors.size()) + " problem" +
                      (errors.size() == 1 ? "" : "s") + "):";
    for (const auto& e : errors) msg += "\n  " + e;
    throw InputError(msg);
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  auto c = parse_config(buf.str(), path.string());
  // A relative catalog path is taken relative to the config file.
  if (!c.catalog.empty() && std::filesystem::path(c.catalog).is_relative()) {
    c.catalog = (path.parent_path() / c.catalog).lexically_normal().string();
  }
  return c;
}

std::string to_config_text(const RunConfig& c) {
  const auto& t = c.train;
  const auto& m = t.model;
  std::ostringstream out;
  out.precision(17);
  out << "catalog = " << c.catalog << "\n";
  out << "out = " << c.out << "\n";
  out << "model = " << to_string(m.kind) << "\n";
  out << "dim = " << m.dim << "\n";
  out << "normalization = " << to_string(m.normalization) << "\n";
  out << "cell = " << to_string(m.cell) << "\n";
  out << "hierarchical_category = " << (m.hierarchical_category ? "true" : "false") << "\n";
  out << "bpr_lambda = " << m.bpr_lambda << "\n";
  out << "weight_decay = " << m.weight_decay << "\n";
  out << "explicit_axes = [";
  for (std::size_t k = 0; k < m.space.explicit_axes.size(); ++k) {
    out << (k ? ", " : "") << to_string(m.space.explicit_axes[k]);
  }
  out << "]\n";
  out << "implicit_axes = " << m.space.implicit_axes << "\n";
  out << "implicit_multiplier = " << m.space.implicit_multiplier << "\n";
  out << "learning_rate = " << t.learning_rate << "\n";
  out << "lr_halving_period = " << t.lr_halving_period << "\n";
  out << "patience = " << t.patience << "\n";
  out << "min_delta = " << t.min_delta << "\n";
  out << "max_reallocations = " << t.max_reallocations << "\n";
  out << "max_epochs_per_estep = " << t.max_epochs_per_estep << "\n";
  out << "seed = " << t.seed << "\n";
  out << "threads = " << t.threads << "\n";
  if (t.valid_sample_cap) out << "valid_sample_cap = " << *t.valid_sample_cap << "\n";
  return out.str();
}

nlohmann::ordered_json to_json(const TrainConfig& t) {
  const auto& m = t.model;
  nlohmann::ordered_json axes = nlohmann::ordered_json::array();
  for (auto a : m.space.explicit_axes) axes.push_back(to_string(a));
  nlohmann::ordered_json j;
  j["model"] = to_string(m.kind);
  j["dim"] = m.dim;
  j["normalization"] = to_string(m.normalization);
  j["cell"] = to_string(m.cell);
  j["hierarchical_category"] = m.hierarchical_category;
  j["bpr_lambda"] = m.bpr_lambda;
  j["weight_decay"] = m.weight_decay;
  j["explicit_axes"] = axes;
  j["implicit_axes"] = m.space.implicit_axes;
  j["implicit_multiplier"] = m.space.implicit_multiplier;
  j["learning_rate"] = t.learning_rate;
  j["lr_halving_period"] = t.lr_halving_period;
  j["patience"] = t.patience;
  j["min_delta"] = t.min_delta;
  j["max_reallocations"] = t.max_reallocations;
  j["max_epochs_per_estep"] = t.max_epochs_per_estep;
  j["seed"] = t.seed;
  j["threads"] = t.threads;
  j["valid_sample_cap"] = t.valid_sample_cap ? nlohmann::ordered_json(*t.valid_sample_cap) : nlohmann::ordered_json(nullptr);
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig t;
  auto& m = t.model;
  m.kind = parse_model_kind(j.at("model").get<std::string>());
  m.dim = j.at("dim").get<std::size_t>();
  m.normalization = parse_score_normalization(j.at("normalization").get<std::string>());
  m.cell = parse_rnn_cell(j.at("cell").get<std::string>());
  m.hierarchical_category = j.at("hierarchical_category").get<bool>();
  m.bpr_lambda = j.at("bpr_lambda").get<double>();
  m.weight_decay = j.at("weight_decay").get<double>();
  m.space.explicit_axes.clear();
  for (const auto& a : j.at("explicit_axes")) m.space.explicit_axes.push_back(parse_explicit_attribute(a.get<std::string>()));
  m.space.implicit_axes = j.at("implicit_axes").get<std::size_t>();
  m.space.implicit_multiplier = j.at("implicit_multiplier").get<double>();
  t.learning_rate = j.at("learning_rate").get<double>();
  t.lr_halving_period = j.at("lr_halving_period").get<std::size_t>();
  t.patience = j.at("patience").get<std::size_t>();
  t.min_delta = j.at("min_delta").get<double>();
  t.max_reallocations = j.at("max_reallocations").get<std::size_t>();
  t.max_epochs_per_estep = j.at("max_epochs_per_estep").get<std::size_t>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.threads = j.at("threads").get<std::size_t>();
  if (!j.at("valid_sample_cap").is_null()) t.valid_sample_cap = j.at("valid_sample_cap").get<std::size_t>();
  return t;
}

}  // namespace dirrec
