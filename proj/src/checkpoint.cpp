#include "dirrec/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dirrec/config.hpp"

namespace dirrec {
namespace {

constexpr char kMagic[8] = {'D', 'I', 'R', 'R', 'E', 'C', 'K', 'P'};

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in, const std::string& what) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw InputError("truncated checkpoint: missing " + what);
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(b[k]) << (8 * k);
  return v;
}

void write_double(std::ostream& out, double d) { write_u64(out, std::bit_cast<std::uint64_t>(d)); }

struct Opened {
  std::ifstream in;
  nlohmann::json header;
};

Opened open_checkpoint(const std::filesystem::path& path) {
  Opened o;
  o.in.open(path, std::ios::binary);
  if (!o.in) throw InputError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!o.in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw InputError(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto size = std::filesystem::file_size(path);
  const auto len = read_u64(o.in, "header length");
  if (len > size) throw InputError("corrupt checkpoint " + path.string() + ": header length exceeds file size");
  std::string text(len, '\0');
  if (!o.in.read(text.data(), static_cast<std::streamsize>(len))) {
    throw InputError("truncated checkpoint " + path.string() + ": header");
  }
  try {
    o.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  if (!o.header.is_object() || o.header.value("format", "") != "dirrec-checkpoint") {
    throw InputError(path.string() + ": header does not describe a checkpoint");
  }
  const auto version = o.header.value("version", 0u);
  if (version != kCheckpointVersion) {
    throw InputError(path.string() + ": checkpoint format version " + std::to_string(version) +
                     " is not supported (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  }
  return o;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Checkpoint& ck) {
  static_assert(sizeof(double) == 8);
  if (!ck.model) throw std::invalid_argument("checkpoint without a model");
  nlohmann::ordered_json h;
  h["format"] = "dirrec-checkpoint";
  h["version"] = kCheckpointVersion;
  h["model"] = to_string(ck.model->kind());
  h["config"] = to_json(ck.config);
  h["catalog_path"] = ck.catalog_path;
  h["rng_state"] = ck.rng_state;
  h["best_valid_auc"] = ck.best_valid_auc ? nlohmann::ordered_json(*ck.best_valid_auc) : nlohmann::ordered_json(nullptr);
  h["epoch"] = ck.epoch;
  h["round"] = ck.round;
  if (const auto* dir = dynamic_cast<const DirModel*>(ck.model.get())) {
    auto axes = nlohmann::ordered_json::array();
    for (const auto& a : dir->space().axes()) axes.push_back({{"name", a.name}, {"size", a.size}});
    h["axes"] = axes;
    auto alloc = nlohmann::ordered_json::array();
    const auto& al = dir->allocation();
    for (ItemIndex q = 0; q < al.num_items(); ++q) {
      nlohmann::ordered_json row = nlohmann::ordered_json::array();
      row.push_back(q);
      for (auto v : al.cell(q)) row.push_back(v);
      alloc.push_back(row);
    }
    h["allocation"] = alloc;
  }
  auto tables = ck.model->parameter_tables();
  auto shapes = nlohmann::ordered_json::array();
  for (const auto& t : tables) shapes.push_back({{"name", t.name}, {"rows", t.matrix->rows()}, {"cols", t.matrix->cols()}});
  h["tables"] = shapes;

  const auto text = h.dump(1);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(kMagic, 8);
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : tables) {
      write_u64(out, t.matrix->size());
      for (double v : t.matrix->values()) write_double(out, v);
    }
    if (!out) throw std::runtime_error("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) { return open_checkpoint(path).header; }

Checkpoint load_checkpoint(const std::filesystem::path& path, const Catalog& catalog) {
  auto o = open_checkpoint(path);
  const auto& h = o.header;
  Checkpoint ck;
  try {
    ck.config = train_config_from_json(h.at("config"));
    ck.catalog_path = h.at("catalog_path").get<std::string>();
    ck.rng_state = h.at("rng_state").get<std::string>();
    if (!h.at("best_valid_auc").is_null()) ck.best_valid_auc = h.at("best_valid_auc").get<double>();
    ck.epoch = h.at("epoch").get<std::size_t>();
    ck.round = h.at("round").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  ck.model = create_model(ck.config.model, catalog, ck.config.seed);
  if (to_string(ck.model->kind()) != h.value("model", "")) {
    throw InputError(path.string() + ": model kind does not match its configuration");
  }
  const std::string mismatch = path.string() + ": checkpoint does not match the catalog: ";
  if (auto* dir = dynamic_cast<DirModel*>(ck.model.get())) {
    const auto& axes = h.at("axes");
    if (axes.size() != dir->space().num_axes()) throw InputError(mismatch + "axis count differs");
    for (std::size_t a = 0; a < axes.size(); ++a) {
      if (axes[a].at("size").get<std::size_t>() != dir->space().axis(a).size) {
        throw InputError(mismatch + "axis '" + dir->space().axis(a).name + "' size differs");
      }
    }
    const auto& rows = h.at("allocation");
    if (rows.size() != catalog.num_items()) throw InputError(mismatch + "item count differs");
    Allocation alloc(catalog.num_items(), dir->space().num_axes());
    for (const auto& row : rows) {
      if (row.size() != 1 + dir->space().num_axes()) throw InputError(path.string() + ": malformed allocation row");
      const auto q = row[0].get<ItemIndex>();
      if (q >= catalog.num_items()) throw InputError(path.string() + ": allocation references unknown item");
      for (std::size_t a = 0; a < dir->space().num_axes(); ++a) alloc.set_coordinate(q, a, row[1 + a].get<std::uint32_t>());
    }
    if (auto v = alloc.violation(dir->space())) throw InputError(path.string() + ": invalid allocation: " + *v);
    dir->set_allocation(std::move(alloc));
  }
  auto tables = ck.model->parameter_tables();
  const auto& shapes = h.at("tables");
  if (shapes.size() != tables.size()) throw InputError(mismatch + "table count differs");
  for (std::size_t t = 0; t < tables.size(); ++t) {
    auto& m = *tables[t].matrix;
    if (shapes[t].at("name").get<std::string>() != tables[t].name ||
        shapes[t].at("rows").get<std::size_t>() != m.rows() || shapes[t].at("cols").get<std::size_t>() != m.cols()) {
      throw InputError(mismatch + "table '" + tables[t].name + "' shape differs");
    }
    const auto count = read_u64(o.in, "table '" + tables[t].name + "'");
    if (count != m.size()) throw InputError(path.string() + ": table '" + tables[t].name + "' has a bad length");
    for (auto& v : m.values()) v = std::bit_cast<double>(read_u64(o.in, "table '" + tables[t].name + "' data"));
  }
  if (o.in.peek() != std::char_traits<char>::eof()) throw InputError(path.string() + ": trailing bytes after tables");
  ck.model->refresh();
  return ck;
}

std::size_t checkpoint_scalar_count(const std::filesystem::path& path) {
  auto o = open_checkpoint(path);
  std::size_t total = 0;
  for (std::size_t t = 0; t < o.header.at("tables").size(); ++t) {
    const auto count = read_u64(o.in, "table length");
    total += count;
    o.in.seekg(static_cast<std::streamoff>(count * 8), std::ios::cur);
  }
  return total;
}

}  // namespace dirrec
