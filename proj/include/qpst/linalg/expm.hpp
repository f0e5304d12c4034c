#pragma once

#include <array>
#include <cmath>

#include <Eigen/LU>

#include "qpst/types.hpp"

namespace qpst::linalg {

// Degree-13 diagonal Padé approximant with scaling and squaring. theta_13 is
// the largest 1-norm for which the unscaled approximant meets double
// precision backward error.
inline CMatrix expm(const CMatrix& a) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw Error("expm: matrix is not square");
  if (n == 0) return a;

  static constexpr std::array<double, 14> b = {
      64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
      129060195264000.0,   10559470521600.0,    670442572800.0,     33522128640.0,
      1323241920.0,        40840800.0,          960960.0,           16380.0,
      182.0,               1.0};
  constexpr double theta13 = 5.371920351148152;

  const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm1 > theta13) squarings = static_cast<int>(std::ceil(std::log2(norm1 / theta13)));
  const CMatrix as = a / std::ldexp(1.0, squarings);

  const CMatrix ident = CMatrix::Identity(n, n);
  const CMatrix a2 = as * as;
  const CMatrix a4 = a2 * a2;
  const CMatrix a6 = a4 * a2;

  const CMatrix u_inner = a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident;
  const CMatrix u = as * u_inner;
  const CMatrix v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident;

  CMatrix r = (v - u).partialPivLu().solve(v + u);
  for (int k = 0; k < squarings; ++k) r = r * r;
  return r;
}

}  // namespace qpst::linalg
