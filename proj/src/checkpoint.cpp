#include "moue/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace moue {

namespace {

constexpr char kMagic[4] = {'M', 'O', 'U', 'E'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
  put_u64(out, std::bit_cast<std::uint64_t>(d));
}

struct Reader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw FormatError("truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

const Checkpoint::Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("missing tensor: " + name);
}

void Checkpoint::add(const std::string& name, const Matrix& m) {
  Tensor t;
  t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.data.assign(m.data(), m.data() + m.size());  // Matrix is row-major
  tensors.emplace_back(name, std::move(t));
}

void Checkpoint::add(const std::string& name, const Vector& v) {
  Tensor t;
  t.dims = {static_cast<std::uint64_t>(v.size())};
  t.data.assign(v.data(), v.data() + v.size());
  tensors.emplace_back(name, std::move(t));
}

Matrix Checkpoint::matrix(const std::string& name) const {
  const Tensor& t = tensor(name);
  if (t.dims.size() != 2) throw FormatError("tensor rank mismatch: " + name);
  Matrix m(static_cast<Eigen::Index>(t.dims[0]), static_cast<Eigen::Index>(t.dims[1]));
  std::memcpy(m.data(), t.data.data(), t.data.size() * sizeof(double));
  return m;
}

Vector Checkpoint::vector(const std::string& name) const {
  const Tensor& t = tensor(name);
  if (t.dims.size() != 1) throw FormatError("tensor rank mismatch: " + name);
  Vector v(static_cast<Eigen::Index>(t.dims[0]));
  std::memcpy(v.data(), t.data.data(), t.data.size() * sizeof(double));
  return v;
}

std::string Checkpoint::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw FormatError("missing metadata key: " + key);
  return it->second;
}

std::string Checkpoint::meta_or(const std::string& key, const std::string& fallback) const {
  auto it = metadata.find(key);
  return it == metadata.end() ? fallback : it->second;
}

std::vector<std::uint8_t> Checkpoint::save() const {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kVersion);

  std::ostringstream meta;
  for (const auto& [k, v] : metadata) meta << k << '=' << v << '\n';
  const std::string meta_str = meta.str();
  put_u64(out, meta_str.size());
  out.insert(out.end(), meta_str.begin(), meta_str.end());

  put_u64(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put_u64(out, name.size());
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, 0);  // dtype 0: float64 little-endian
    put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    std::uint64_t count = 1;
    for (std::uint64_t d : t.dims) {
      put_u64(out, d);
      count *= d;
    }
    if (count != t.data.size()) throw FormatError("tensor size mismatch: " + name);
    for (double d : t.data) put_f64(out, d);
  }
  return out;
}

Checkpoint Checkpoint::load(const std::vector<std::uint8_t>& bytes) {
  Reader r{bytes};
  if (r.str(4) != std::string(kMagic, 4)) throw FormatError("bad magic");
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw FormatError("unsupported version");

  Checkpoint ckpt;
  const std::uint64_t meta_len = r.u64();
  std::istringstream meta(r.str(meta_len));
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("malformed metadata line");
    ckpt.metadata.emplace(line.substr(0, eq), line.substr(eq + 1));
  }

  const std::uint64_t n_tensors = r.u64();
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    const std::string name = r.str(r.u64());
    if (ckpt.has(name)) throw FormatError("duplicate tensor");
    const std::uint32_t dtype = r.u32();
    if (dtype != 0) throw FormatError("unsupported dtype");
    const std::uint32_t rank = r.u32();
    Tensor t;
    std::uint64_t count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.dims.push_back(r.u64());
      count *= t.dims.back();
    }
    t.data.resize(count);
    for (std::uint64_t j = 0; j < count; ++j) t.data[j] = r.f64();
    ckpt.tensors.emplace_back(name, std::move(t));
  }
  return ckpt;
}

void Checkpoint::save_file(const std::filesystem::path& path) const {
  const auto bytes = save();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
}

Checkpoint Checkpoint::load_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("not found: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  return load(bytes);
}

}  // namespace moue
