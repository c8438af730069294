#include "ctfr/io_util.hpp"

#include <bit>
#include <cstring>
#include <stdexcept>

#include "ctfr/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "on-disk formats assume a little-endian host");

namespace ctfr::io {

void write_exact(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw std::runtime_error("write failed");
}

void read_exact(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw FormatError("unexpected end of file");
}

void write_u64(std::ostream& os, std::uint64_t v) { write_exact(os, &v, sizeof v); }

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  read_exact(is, &v, sizeof v);
  return v;
}

void write_f64(std::ostream& os, double v) { write_exact(os, &v, sizeof v); }

double read_f64(std::istream& is) {
  double v = 0;
  read_exact(is, &v, sizeof v);
  return v;
}

void write_f64s(std::ostream& os, std::span<const double> v) {
  if (!v.empty()) write_exact(os, v.data(), v.size() * sizeof(double));
}

void read_f64s(std::istream& is, double* dst, std::size_t n) {
  if (n != 0) read_exact(is, dst, n * sizeof(double));
}

void write_magic(std::ostream& os, std::string_view magic) {
  if (magic.size() != 8) throw std::invalid_argument("magic must be 8 bytes");
  write_exact(os, magic.data(), magic.size());
}

void expect_magic(std::istream& is, std::string_view magic, std::string_view what) {
  char buf[8] = {};
  is.read(buf, 8);
  if (is.gcount() != 8 || std::memcmp(buf, magic.data(), 8) != 0)
    throw FormatError(std::string(what) + ": bad or missing file signature");
}

void write_string(std::ostream& os, std::string_view s) {
  write_u64(os, s.size());
  write_exact(os, s.data(), s.size());
}

std::string read_string(std::istream& is, std::uint64_t max_len) {
  std::uint64_t n = read_u64(is);
  if (n > max_len) throw FormatError("embedded string length is implausibly large");
  std::string s(static_cast<std::size_t>(n), '\0');
  read_exact(is, s.data(), s.size());
  return s;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  return os;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open for reading: " + path.string());
  return is;
}

}  // namespace ctfr::io
