#include "ocgvf/core/serialize.hpp"

#include <bit>
#include <stdexcept>

namespace ocgvf::core {

void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw std::runtime_error("read_u64: truncated stream");
  return v;
}

void write_i64(std::ostream& os, int64_t v) {
  write_u64(os, static_cast<uint64_t>(v));
}

int64_t read_i64(std::istream& is) {
  return static_cast<int64_t>(read_u64(is));
}

void write_f64(std::ostream& os, double v) {
  write_u64(os, std::bit_cast<uint64_t>(v));
}

double read_f64(std::istream& is) {
  return std::bit_cast<double>(read_u64(is));
}

void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const uint64_t n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("read_string: truncated stream");
  return s;
}

}  // namespace ocgvf::core
