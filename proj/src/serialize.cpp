#include "tsap/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "tsap/error.hpp"

namespace tsap {

static_assert(std::endian::native == std::endian::little, "parameter files assume little-endian");

namespace {

constexpr char kMagic[8] = {'T', 'S', 'A', 'P', 'P', 'R', 'M', '\0'};
// Sanity bound on any single length field; guards against reading garbage.
constexpr std::uint64_t kMaxLen = 1ull << 32;

template <class T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ofstream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw ParseError("cannot open parameter file " + path.string());
  }

  template <class T>
  T get() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) fail("truncated");
    return v;
  }

  std::uint64_t get_len() {
    auto n = get<std::uint64_t>();
    if (n > kMaxLen) fail("implausible length field");
    return n;
  }

  std::string get_string() {
    std::string s(get_len(), '\0');
    in_.read(s.data(), static_cast<std::streamsize>(s.size()));
    if (!in_) fail("truncated");
    return s;
  }

  void get_doubles(std::vector<double>& v) {
    in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in_) fail("truncated");
  }

  void header(std::string* arch, std::string* meta) {
    char magic[8];
    in_.read(magic, 8);
    if (!in_ || std::memcmp(magic, kMagic, 8) != 0) fail("not a parameter file");
    const auto version = get<std::uint32_t>();
    if (version != kParamFormatVersion)
      fail("format version " + std::to_string(version) + " (expected " +
           std::to_string(kParamFormatVersion) + ")");
    *arch = get_string();
    *meta = get_string();
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

  [[noreturn]] void fail(const std::string& what) {
    throw ParseError(path_.string() + ": " + what);
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace

void save_params(const std::filesystem::path& path, const ParamSet& params,
                 const std::string& arch_manifest, const std::string& metadata) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write parameter file " + path.string());
  out.write(kMagic, 8);
  put<std::uint32_t>(out, kParamFormatVersion);
  put_string(out, arch_manifest);
  put_string(out, metadata);
  put<std::uint64_t>(out, params.entries().size());
  for (const auto& e : params.entries()) {
    put_string(out, e.name);
    put<std::uint8_t>(out, e.trainable ? 1 : 0);
    const Tensor& t = e.var.value();
    put<std::uint64_t>(out, t.rank());
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.vec().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw Error("write failed for " + path.string());
}

void load_params(const std::filesystem::path& path, ParamSet& params,
                 const std::string& arch_manifest, std::string* metadata) {
  Reader r(path);
  std::string arch, meta;
  r.header(&arch, &meta);
  if (arch != arch_manifest)
    throw ContractError(path.string() + ": architecture manifest mismatch; file has " + arch +
                        " but the model expects " + arch_manifest);
  const std::uint64_t n = r.get_len();
  if (n != params.entries().size())
    throw ContractError(path.string() + ": file holds " + std::to_string(n) +
                        " tensors, model has " + std::to_string(params.entries().size()));
  // Read everything first so a failure leaves `params` untouched.
  std::vector<Tensor> values;
  values.reserve(n);
  for (const auto& e : params.entries()) {
    const std::string name = r.get_string();
    r.get<std::uint8_t>();
    if (name != e.name) throw ContractError(path.string() + ": expected tensor '" + e.name + "', found '" + name + "'");
    Shape shape(r.get_len());
    for (auto& d : shape) d = r.get_len();
    if (shape != e.var.shape())
      throw ContractError(path.string() + ": tensor '" + name + "' has shape " + shape_str(shape) +
                          ", model expects " + shape_str(e.var.shape()));
    std::vector<double> data(numel(shape));
    r.get_doubles(data);
    values.emplace_back(shape, std::move(data));
  }
  if (!r.at_end()) r.fail("trailing bytes");
  for (std::size_t i = 0; i < n; ++i) params.entries()[i].var.assign(std::move(values[i]));
  if (metadata) *metadata = meta;
}

void peek_params(const std::filesystem::path& path, std::string* arch_manifest,
                 std::string* metadata) {
  Reader r(path);
  std::string arch, meta;
  r.header(&arch, &meta);
  if (arch_manifest) *arch_manifest = arch;
  if (metadata) *metadata = meta;
}

}  // namespace tsap
