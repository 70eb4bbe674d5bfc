#pragma once

#include <string>
#include <string_view>

namespace persurv {

// Shortest decimal text that round-trips to the same double; "inf"/"-inf"
// for infinities. Used by every CSV writer so files are bit-stable.
std::string format_double(double v);

// Inverse of format_double; accepts "inf", "+inf", "-inf".
double parse_double_cell(std::string_view cell);

// 64-bit FNV-1a, hex encoded. Provenance hashes in reports.
std::string fnv1a_hex(std::string_view data);

}  // namespace persurv
