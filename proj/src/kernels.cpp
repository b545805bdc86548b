#include "latesim/kernels.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "latesim/common.hpp"

namespace latesim {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// 4 query rows x 4 document rows register tile: sixteen independent
// reduction chains share each operand load. The omp simd reduction fixes the
// lane tree at compile time, so results never depend on thread count.
void tile4x4(const double* q, const double* p, std::size_t d, std::size_t stride,
             double out[4][4]) {
  const double *q0 = q, *q1 = q + stride, *q2 = q + 2 * stride, *q3 = q + 3 * stride;
  const double *p0 = p, *p1 = p + stride, *p2 = p + 2 * stride, *p3 = p + 3 * stride;
  double a00 = 0, a01 = 0, a02 = 0, a03 = 0, a10 = 0, a11 = 0, a12 = 0, a13 = 0;
  double a20 = 0, a21 = 0, a22 = 0, a23 = 0, a30 = 0, a31 = 0, a32 = 0, a33 = 0;
#pragma omp simd reduction(+ : a00, a01, a02, a03, a10, a11, a12, a13, a20, a21, a22, a23, a30, \
                               a31, a32, a33)
  for (std::size_t x = 0; x < d; ++x) {
    const double v0 = p0[x], v1 = p1[x], v2 = p2[x], v3 = p3[x];
    const double u0 = q0[x], u1 = q1[x], u2 = q2[x], u3 = q3[x];
    a00 += u0 * v0; a01 += u0 * v1; a02 += u0 * v2; a03 += u0 * v3;
    a10 += u1 * v0; a11 += u1 * v1; a12 += u1 * v2; a13 += u1 * v3;
    a20 += u2 * v0; a21 += u2 * v1; a22 += u2 * v2; a23 += u2 * v3;
    a30 += u3 * v0; a31 += u3 * v1; a32 += u3 * v2; a33 += u3 * v3;
  }
  out[0][0] = a00; out[0][1] = a01; out[0][2] = a02; out[0][3] = a03;
  out[1][0] = a10; out[1][1] = a11; out[1][2] = a12; out[1][3] = a13;
  out[2][0] = a20; out[2][1] = a21; out[2][2] = a22; out[2][3] = a23;
  out[3][0] = a30; out[3][1] = a31; out[3][2] = a32; out[3][3] = a33;
}

double dot_simd(const double* a, const double* b, std::size_t d) {
  double acc = 0.0;
#pragma omp simd reduction(+ : acc)
  for (std::size_t x = 0; x < d; ++x) acc += a[x] * b[x];
  return acc;
}

// Widens to 64-bit and rescales every row to exact unit norm, so the kernel
// scores cosines even when stored rows carry float rounding. A zero row maps
// to zeros; callers reject those up front.
void widen_unit_rows(const float* src, std::size_t rows, std::size_t d,
                     std::vector<double>& dst) {
  dst.resize(rows * d);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = src + r * d;
    double* out = dst.data() + r * d;
    double sum = 0.0;
#pragma omp simd reduction(+ : sum)
    for (std::size_t x = 0; x < d; ++x) sum += double(in[x]) * double(in[x]);
    const double inv = sum > 0.0 ? 1.0 / std::sqrt(sum) : 0.0;
#pragma omp simd
    for (std::size_t x = 0; x < d; ++x) out[x] = double(in[x]) * inv;
  }
}

}  // namespace

double maxsim(const float* q, std::size_t t, const float* p, std::size_t m, std::size_t d) {
  thread_local std::vector<double> qbuf, pbuf, row_max;
  widen_unit_rows(q, t, d, qbuf);
  widen_unit_rows(p, m, d, pbuf);
  row_max.assign(t, kNegInf);
  const double* qd = qbuf.data();
  const double* pd = pbuf.data();

  std::size_t i = 0;
  for (; i + 4 <= t; i += 4) {
    double best[4] = {kNegInf, kNegInf, kNegInf, kNegInf};
    std::size_t j = 0;
    for (; j + 4 <= m; j += 4) {
      double out[4][4];
      tile4x4(qd + i * d, pd + j * d, d, d, out);
      for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 4; ++c) {
          if (out[r][c] > best[r]) best[r] = out[r][c];
        }
      }
    }
    for (; j < m; ++j) {
      for (std::size_t r = 0; r < 4; ++r) {
        const double acc = dot_simd(qd + (i + r) * d, pd + j * d, d);
        if (acc > best[r]) best[r] = acc;
      }
    }
    for (std::size_t r = 0; r < 4; ++r) row_max[i + r] = best[r];
  }
  for (; i < t; ++i) {
    double best = kNegInf;
    for (std::size_t j = 0; j < m; ++j) {
      const double acc = dot_simd(qd + i * d, pd + j * d, d);
      if (acc > best) best = acc;
    }
    row_max[i] = best;
  }

  double total = 0.0;
  for (std::size_t k = 0; k < t; ++k) total += row_max[k];
  return total;
}

double late_interaction_score(const MultiVector& q, const MultiVector& p) {
  if (q.dim() != p.dim()) {
    throw DataError("dimension mismatch: " + std::to_string(q.dim()) + " vs " +
                    std::to_string(p.dim()));
  }
  auto check_rows = [](const MultiVector& m) {
    for (std::size_t i = 0; i < m.tokens(); ++i) {
      double sum = 0.0;
      for (const float v : m.row(i)) sum += double(v) * double(v);
      if (sum == 0.0) throw DataError("degenerate embedding");
    }
  };
  check_rows(q);
  check_rows(p);
  return maxsim(q.data(), q.tokens(), p.data(), p.tokens(), q.dim());
}

double normalized_late_score(const MultiVector& q, const MultiVector& p) {
  return late_interaction_score(q, p) / double(q.tokens());
}

}  // namespace latesim
