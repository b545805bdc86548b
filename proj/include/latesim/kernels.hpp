#pragma once

#include <cstddef>

#include "latesim/multi_vector.hpp"

namespace latesim {

// Blocked late-interaction kernel: sum over query rows of the maximum dot
// product against any document row. q and p are row-major t x d / m x d float
// buffers. Inputs are widened to 64-bit scratch once per call; accumulation
// is 64-bit throughout, and the per-row maxima are reduced in row order, so
// the result does not depend on thread count.
//
// The serial triple-loop equivalent lives in reference.hpp and is the test
// oracle for this kernel.
double maxsim(const float* q, std::size_t t, const float* p, std::size_t m, std::size_t d);

// Eq.-style late interaction over typed multi-vectors. Asymmetric: q is the
// query side. Throws DataError on a per-token dimension mismatch.
double late_interaction_score(const MultiVector& q, const MultiVector& p);

// Late interaction divided by the query token count. This is the training
// convention; retrieval ranks by the unnormalized score.
double normalized_late_score(const MultiVector& q, const MultiVector& p);

}  // namespace latesim
