#include "boxip/mmio.hpp"

#include <cctype>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace boxip::io {

SpMat read_matrix_market(std::istream& in) {
  std::string line;
  int lineno = 0;
  bool header_seen = false;
  long rows = -1, cols = -1, nnz = -1;
  std::vector<Eigen::Triplet<double>> trips;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '%') {
      if (!header_seen && line.rfind("%%MatrixMarket", 0) == 0) {
        std::istringstream hs(line);
        std::string tag, object, format, field, symmetry;
        hs >> tag >> object >> format >> field >> symmetry;
        if (object != "matrix" || format != "coordinate" || field != "real" ||
            symmetry != "general")
          throw ParseError(lineno, "expected 'matrix coordinate real general'");
        header_seen = true;
      }
      continue;
    }
    std::istringstream ls(line);
    if (rows < 0) {
      if (!(ls >> rows >> cols >> nnz) || rows <= 0 || cols <= 0 || nnz < 0)
        throw ParseError(lineno, "bad size line");
      trips.reserve(nnz);
      continue;
    }
    long i, j;
    double v;
    if (!(ls >> i >> j >> v)) throw ParseError(lineno, "bad entry line");
    if (i < 1 || i > rows || j < 1 || j > cols)
      throw ParseError(lineno, "entry index out of range");
    if (!std::isfinite(v)) throw ParseError(lineno, "entry value not finite");
    trips.emplace_back(i - 1, j - 1, v);
  }
  if (rows < 0) throw ParseError(lineno, "missing size line");
  if (static_cast<long>(trips.size()) != nnz)
    throw ParseError(lineno, "entry count does not match header");
  SpMat A(rows, cols);
  A.setFromTriplets(trips.begin(), trips.end());
  A.makeCompressed();
  return A;
}

SpMat read_matrix_market_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_matrix_market(in);
}

void write_matrix_market(std::ostream& out, const SpMat& A) {
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << A.rows() << " " << A.cols() << " " << A.nonZeros() << "\n";
  char buf[64];
  for (Index i = 0; i < A.rows(); ++i) {
    for (SpMat::InnerIterator it(A, i); it; ++it) {
      std::snprintf(buf, sizeof(buf), "%lld %lld %.17g\n",
                    static_cast<long long>(i + 1), static_cast<long long>(it.col() + 1),
                    it.value());
      out << buf;
    }
  }
}

void write_matrix_market_file(const std::string& path, const SpMat& A) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_matrix_market(out, A);
}

}  // namespace boxip::io
