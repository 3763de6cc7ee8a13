#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "ocgvf/core/kernels.hpp"

int main(int argc, char** argv) {
  ocgvf::core::kernels::init_from_env();
  return doctest::Context(argc, argv).run();
}
