#pragma once

#include <iosfwd>
#include <string>

#include "boxip/common.hpp"

namespace boxip::io {

/// Reads a Matrix Market coordinate file (real general, 1-based indices).
SpMat read_matrix_market(std::istream& in);
SpMat read_matrix_market_file(const std::string& path);

/// Writes coordinate real general with 1-based indices, row-major entry order.
void write_matrix_market(std::ostream& out, const SpMat& A);
void write_matrix_market_file(const std::string& path, const SpMat& A);

}  // namespace boxip::io
