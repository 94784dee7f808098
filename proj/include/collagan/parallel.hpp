// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>

namespace collagan {

/// Thread cap for intra-op kernels. Initialised from COLLAGAN_THREADS
/// (default 1); values are clamped to [1, hardware_concurrency].
int intra_op_threads();
void set_intra_op_threads(int n);

/// Runs body(i) for i in [0, n). Work items are independent; callers that
/// reduce across items must do so afterwards in index order so results do
/// not depend on the thread count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body);

}  // namespace collagan
