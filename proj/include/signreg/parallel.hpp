/**
 * Copyright 2026 The signreg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Process-wide worker count for embarrassingly parallel loops. Work items are
// independent and results are gathered by index, so output never depends on
// the worker count.

#ifndef SIGNREG_PARALLEL_HPP_
#define SIGNREG_PARALLEL_HPP_

#include <cstddef>
#include <functional>

namespace signreg {

void set_thread_count(std::size_t n);  // 0 is treated as 1
std::size_t thread_count() noexcept;

// Calls fn(i) for i in [0, n). The first exception by index is rethrown
// after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace signreg

#endif  // SIGNREG_PARALLEL_HPP_
