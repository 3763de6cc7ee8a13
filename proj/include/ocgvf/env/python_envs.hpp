#pragma once

#include <memory>

#include "ocgvf/env/registry.hpp"

namespace ocgvf::env {

// Wraps a Python-backed environment (MiniGrid, ProcGen). Throws
// DependencyError naming the missing pip package when the interpreter or the
// package is unavailable.
std::unique_ptr<Env> make_python_env(const EnvSpec& spec);

}  // namespace ocgvf::env
