#pragma once

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "ocgvf/core/tensor.hpp"

// Little-endian binary stream helpers for checkpoints. x86-only project; byte
// order is not abstracted.

namespace ocgvf::core {

void write_u64(std::ostream& os, uint64_t v);
uint64_t read_u64(std::istream& is);
void write_i64(std::ostream& os, int64_t v);
int64_t read_i64(std::istream& is);
void write_f64(std::ostream& os, double v);
double read_f64(std::istream& is);
void write_string(std::ostream& os, const std::string& s);
std::string read_string(std::istream& is);

template <typename T>
void write_pod_vec(std::ostream& os, const std::vector<T>& v) {
  write_u64(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
std::vector<T> read_pod_vec(std::istream& is) {
  const uint64_t n = read_u64(is);
  std::vector<T> v(n);
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(T)));
  if (!is) throw std::runtime_error("read_pod_vec: truncated stream");
  return v;
}

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  write_u64(os, t.rank());
  for (int i = 0; i < t.rank(); ++i) write_i64(os, t.dim(i));
  write_pod_vec(os, t.vec());
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  const uint64_t rank = read_u64(is);
  Shape s(rank);
  for (auto& d : s) d = static_cast<int>(read_i64(is));
  auto data = read_pod_vec<T>(is);
  return Tensor<T>::from(s, std::move(data));
}

}  // namespace ocgvf::core
