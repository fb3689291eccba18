#include "vcvae/container.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "vcvae/error.hpp"

namespace vcvae {

namespace {

constexpr char kMagic[8] = {'V', 'C', 'V', 'A', 'E', 'C', 'N', 'T'};

template <class T>
void put_le(std::string& out, T v) {
  static_assert(std::is_integral_v<T> || std::is_floating_point_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::filesystem::path& path)
      : bytes_(bytes), path_(path) {}

  template <class T>
  T get() {
    need(sizeof(T));
    unsigned char b[sizeof(T)];
    std::memcpy(b, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(FormatError::Reason::kTruncated,
                        "'" + path_.string() + "' ends unexpectedly");
    }
  }

  const std::string& bytes_;
  std::filesystem::path path_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string exact_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

void Container::set(const std::string& key, const std::string& value) {
  if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
    throw InvalidArgument("container header entries may not contain '=' in keys or newlines");
  }
  for (auto& [k, v] : header) {
    if (k == key) {
      v = value;
      return;
    }
  }
  header.emplace_back(key, value);
}

void Container::set(const std::string& key, double value) { set(key, exact_number(value)); }

std::optional<std::string> Container::get(const std::string& key) const {
  for (const auto& [k, v] : header) {
    if (k == key) return v;
  }
  return std::nullopt;
}

std::string Container::require(const std::string& key) const {
  auto v = get(key);
  if (!v) throw FormatError(FormatError::Reason::kOther, "container header lacks '" + key + "'");
  return *v;
}

double Container::require_number(const std::string& key) const {
  const std::string s = require(key);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError(FormatError::Reason::kOther,
                      "container header '" + key + "' is not a number: " + s);
  }
  return v;
}

void Container::add_array(const std::string& name, Tensor t) {
  arrays.emplace_back(name, std::move(t));
}

const Tensor* Container::find_array(const std::string& name) const {
  for (const auto& [n, t] : arrays) {
    if (n == name) return &t;
  }
  return nullptr;
}

const Tensor& Container::require_array(const std::string& name) const {
  const Tensor* t = find_array(name);
  if (!t) throw FormatError(FormatError::Reason::kOther, "container lacks array '" + name + "'");
  return *t;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  std::string out(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(out, Container::kFormatVersion);
  std::string text;
  for (const auto& [k, v] : c.header) text += k + "=" + v + "\n";
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.arrays.size()));
  for (const auto& [name, t] : c.arrays) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t dim : t.shape()) put_le<std::uint64_t>(out, dim);
    for (double v : t.values()) put_le<double>(out, v);
  }

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + tmp.string() + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' into place: " + ec.message());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  const std::string bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  Reader r(bytes, path);
  if (r.take(8) != std::string(kMagic, sizeof kMagic)) {
    throw FormatError(FormatError::Reason::kBadMagic, "'" + path.string() + "' is not a vcvae container");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != Container::kFormatVersion) {
    throw FormatError(FormatError::Reason::kOther,
                      "unsupported container version " + std::to_string(version));
  }
  Container c;
  std::istringstream text(r.take(r.get<std::uint32_t>()));
  for (std::string line; std::getline(text, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(FormatError::Reason::kOther, "malformed header line '" + line + "'");
    }
    c.header.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t a = 0; a < count; ++a) {
    std::string name = r.take(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& dim : shape) dim = static_cast<std::size_t>(r.get<std::uint64_t>());
    Tensor t(shape);
    for (auto& v : t.values()) v = r.get<double>();
    c.arrays.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) {
    throw FormatError(FormatError::Reason::kOther, "'" + path.string() + "' has trailing bytes");
  }
  return c;
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::istreambuf_iterator<char> it(f), end; it != end; ++it) {
    h ^= static_cast<unsigned char>(*it);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace vcvae
