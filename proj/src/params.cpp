#include "hoi/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace hoi {

ad::Var& ParamStore::insert(const std::string& name, ad::Matrix value) {
  if (contains(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  entries_.emplace_back(name, ad::Var::parameter(std::move(value)));
  return entries_.back().second;
}

ad::Var ParamStore::create_weight(const std::string& name, int rows, int cols) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  ad::Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng_);
  }
  return insert(name, std::move(m));
}

ad::Var ParamStore::create_constant(const std::string& name, int rows, int cols, double value) {
  return insert(name, ad::Matrix::Constant(rows, cols, value));
}

ad::Var ParamStore::create_normal(const std::string& name, int rows, int cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  ad::Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng_);
  }
  return insert(name, std::move(m));
}

const ad::Var& ParamStore::get(const std::string& name) const {
  for (const auto& [n, v] : entries_) {
    if (n == name) return v;
  }
  throw std::out_of_range("ParamStore: no parameter named " + name);
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return true;
  }
  return false;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.second.value().size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

std::uint64_t ParamStore::hash(const std::string& prefix) const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [name, var] : entries_) {
    if (name.rfind(prefix, 0) != 0) continue;
    const auto* bytes = reinterpret_cast<const unsigned char*>(var.value().data());
    const std::size_t n = static_cast<std::size_t>(var.value().size()) * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

void ParamStore::copy_values_from(const ParamStore& other) {
  for (auto& [name, var] : entries_) {
    const ad::Var& src = other.get(name);
    if (src.rows() != var.rows() || src.cols() != var.cols()) {
      throw std::invalid_argument("ParamStore: shape mismatch copying " + name);
    }
    var.mutable_value() = src.value();
  }
}

Checkpoint Checkpoint::from_params(const ParamStore& store, nlohmann::json meta) {
  Checkpoint c;
  c.meta = std::move(meta);
  c.meta["seed"] = store.seed();
  for (const auto& [name, var] : store.entries()) c.tensors.emplace_back(name, var.value());
  return c;
}

const ad::Matrix* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return &m;
  }
  return nullptr;
}

void Checkpoint::apply_to(ParamStore& store) const {
  for (const auto& [name, var] : store.entries()) {
    const ad::Matrix* m = find(name);
    if (m == nullptr) throw std::runtime_error("checkpoint: missing tensor " + name);
    if (m->rows() != var.rows() || m->cols() != var.cols()) {
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    }
    ad::Var v = var;
    v.mutable_value() = *m;
  }
}

namespace {
constexpr char kMagic[8] = {'H', 'O', 'I', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header;
  header["meta"] = ckpt.meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, m] : ckpt.tensors) {
    header["tensors"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& entry : ckpt.tensors) {
    const ad::Matrix& m = entry.second;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        std::uint64_t bits;
        const double d = m(i, j);
        std::memcpy(&bits, &d, sizeof(bits));
        write_u64(out, bits);
      }
    }
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  }
  const std::uint64_t len = read_u64(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("checkpoint: truncated header");
  const auto header = nlohmann::json::parse(text);
  Checkpoint c;
  c.meta = header.at("meta");
  for (const auto& t : header.at("tensors")) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    ad::Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) {
        const std::uint64_t bits = read_u64(in);
        double d;
        std::memcpy(&d, &bits, sizeof(d));
        m(i, j) = d;
      }
    }
    c.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  return c;
}

}  // namespace hoi
