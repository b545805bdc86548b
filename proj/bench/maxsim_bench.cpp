// Compares the serial reference MaxSim against the blocked kernel across a
// few workload shapes and reports throughput and agreement.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#include "latesim/kernels.hpp"
#include "latesim/reference.hpp"
#include "latesim/rng.hpp"

namespace {

using latesim::Rng;

std::vector<float> random_unit_rows(Rng& rng, std::size_t rows, std::size_t dim) {
  std::vector<float> data(rows * dim);
  for (std::size_t r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (std::size_t x = 0; x < dim; ++x) {
      const double v = rng.normal();
      data[r * dim + x] = float(v);
      sum += v * v;
    }
    const float inv = float(1.0 / std::sqrt(sum));
    for (std::size_t x = 0; x < dim; ++x) data[r * dim + x] *= inv;
  }
  return data;
}

template <typename F>
double time_per_call(F&& f, int iters) {
  volatile double sink = 0.0;
  // warmup
  sink = f();
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < iters; ++i) sink = f();
  const auto stop = std::chrono::steady_clock::now();
  (void)sink;
  return std::chrono::duration<double>(stop - start).count() / iters;
}

}  // namespace

int main() {
  struct Shape {
    std::size_t t, m, d;
    int iters;
  };
  const Shape shapes[] = {
      {8, 64, 32, 400}, {16, 128, 64, 200}, {32, 512, 128, 50}, {64, 1024, 128, 20},
  };

  std::printf("%8s %8s %6s | %12s %12s %9s | %10s\n", "t", "m", "d", "serial (ms)",
              "blocked (ms)", "speedup", "|diff|");
  Rng rng(20240612);
  for (const auto& s : shapes) {
    const auto q = random_unit_rows(rng, s.t, s.d);
    const auto p = random_unit_rows(rng, s.m, s.d);
    const double ref = latesim::maxsim_reference(q.data(), s.t, p.data(), s.m, s.d);
    const double opt = latesim::maxsim(q.data(), s.t, p.data(), s.m, s.d);
    const double t_ref = time_per_call(
        [&] { return latesim::maxsim_reference(q.data(), s.t, p.data(), s.m, s.d); }, s.iters);
    const double t_opt = time_per_call(
        [&] { return latesim::maxsim(q.data(), s.t, p.data(), s.m, s.d); }, s.iters * 4);
    std::printf("%8zu %8zu %6zu | %12.4f %12.4f %8.1fx | %10.2e\n", s.t, s.m, s.d, t_ref * 1e3,
                t_opt * 1e3, t_ref / t_opt, std::fabs(ref - opt));
  }
  return 0;
}
