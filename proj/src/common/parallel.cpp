#include "dnr/parallel.hpp"

#include <omp.h>

namespace dnr {

int max_threads() { return omp_get_max_threads(); }

}  // namespace dnr
