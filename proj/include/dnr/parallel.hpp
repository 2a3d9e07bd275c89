#pragma once

namespace dnr {

/// Selects the serial reference loop or the OpenMP kernel. Both produce
/// bit-identical results: parallel loops only split independent items.
enum class Exec { Serial, Parallel };

int max_threads();

}  // namespace dnr
