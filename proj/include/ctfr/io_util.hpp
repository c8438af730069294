#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>

namespace ctfr::io {

// All on-disk integers are unsigned 64-bit little-endian; floats are IEEE-754
// binary64, little-endian byte order. Magic strings are exactly 8 bytes.

void write_exact(std::ostream& os, const void* p, std::size_t n);
void read_exact(std::istream& is, void* p, std::size_t n);  // FormatError on short read

void write_u64(std::ostream& os, std::uint64_t v);
std::uint64_t read_u64(std::istream& is);
void write_f64(std::ostream& os, double v);
double read_f64(std::istream& is);
void write_f64s(std::ostream& os, std::span<const double> v);
void read_f64s(std::istream& is, double* dst, std::size_t n);

void write_magic(std::ostream& os, std::string_view magic);
// Throws FormatError naming `what` when the stream does not start with `magic`.
void expect_magic(std::istream& is, std::string_view magic, std::string_view what);

void write_string(std::ostream& os, std::string_view s);  // u64 length + raw bytes
std::string read_string(std::istream& is, std::uint64_t max_len = (1u << 20));

std::ofstream open_output(const std::filesystem::path& path);  // runtime_error on failure
std::ifstream open_input(const std::filesystem::path& path);   // FormatError on failure

}  // namespace ctfr::io
