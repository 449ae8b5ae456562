#pragma once

#include <string>

namespace pgx {

// Shortest-round-trip decimal form (printf %.17g): parsing it back yields
// the identical double, so logs and CSV outputs are bitwise-reproducible.
std::string g17(double v);

}  // namespace pgx
