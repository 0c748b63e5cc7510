#pragma once

namespace katlas {

/// Sets the OpenMP team size for subsequent kernels; n <= 0 keeps the
/// runtime default (all cores).
void set_threads(int n);
int max_threads();

} // namespace katlas
