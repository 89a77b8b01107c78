// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace epiview {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Callers write only to
/// slot i, so results are independent of scheduling. threads <= 1 runs inline.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace epiview
