/*
 * Copyright 2026 The scst Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Connectionist temporal classification over translation tokens. The CTC
// head sits on the encoder output; it only regularizes training and is not
// used when decoding.

#ifndef SCST_CTC_HPP
#define SCST_CTC_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "scst/autodiff.hpp"

namespace scst::ctc {

/// log(0) stand-in; keeps every recorded value finite.
inline constexpr double kLogZero = -1e30;

/// Minimum number of frames any alignment of `labels` needs: one per label
/// plus one blank between each adjacent equal pair.
std::size_t min_frames(std::span<const std::int64_t> labels);

/// True iff `frames >= min_frames(labels)`. `frames` counts encoder output
/// frames (after stacking). Items failing this are skipped in training.
bool feasible(std::size_t frames, std::span<const std::int64_t> labels);

/// log(exp(a) + exp(b)) with kLogZero as the absorbing floor.
double log_add(double a, double b);

/// -log P(labels | log_probs) for a row-major T × C matrix of per-frame log
/// probabilities. Optionally returns dLoss/dlog_probs (T × C).
double neg_log_likelihood(std::span<const double> log_probs, std::size_t frames,
                          std::size_t classes, std::span<const std::int64_t> labels,
                          std::int64_t blank, std::vector<double>* grad = nullptr);

/// Tape primitive around `neg_log_likelihood`. `log_probs` is T × (V+1).
/// Throws ad::ContractError for an infeasible item.
ad::Tensor loss(const ad::Tensor& log_probs, std::span<const std::int64_t> labels,
                std::int64_t blank);

/// Per-frame argmax, merge repeats, drop blanks.
std::vector<std::int64_t> greedy_decode(const ad::Tensor& log_probs, std::int64_t blank);

}  // namespace scst::ctc

#endif  // SCST_CTC_HPP
