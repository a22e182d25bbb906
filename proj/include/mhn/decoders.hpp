#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mhn/errors.hpp"
#include "mhn/params.hpp"
#include "mhn/tensor.hpp"

namespace mhn {

struct AnswerSpace {
  enum class Kind { open_ended, count, multi_choice };
  Kind kind = Kind::open_ended;
  std::size_t num_classes = 0;     // open_ended
  int count_min = 1;               // count
  int count_max = 10;
  std::size_t num_candidates = 0;  // multi_choice
};

// Two-layer classification head: hidden GELU layer, then class logits.
struct OpenEndedHead {
  LinearParams hidden;  // [d, d]
  LinearParams out;     // [d, |A|]
};

inline Tensor open_ended_logits(const Tensor& o, const OpenEndedHead& head) {
  Tensor row = reshape(o, {1, o.numel()});
  return reshape(linear(gelu(linear(row, head.hidden)), head.out), {head.out.w.dim(1)});
}

inline Tensor open_ended_probs(const Tensor& o, const OpenEndedHead& head) {
  return softmax_last(open_ended_logits(o, head));
}

// Scalar regression head for the repetition-count task; classification is
// replaced by a single linear output.
struct CountHead {
  LinearParams hidden;  // [d, d]
  LinearParams out;     // [d, 1]
};

inline Tensor count_raw(const Tensor& o, const CountHead& head) {
  Tensor row = reshape(o, {1, o.numel()});
  return reshape(linear(gelu(linear(row, head.hidden)), head.out), {1});
}

// Round half away from zero, then clamp into the declared range.
inline int count_predict(double raw, const AnswerSpace& space) {
  const int rounded = static_cast<int>(std::llround(raw));
  return std::clamp(rounded, space.count_min, space.count_max);
}

// Candidate ranking head over the concatenated question- and
// answer-conditioned features; the two layers have distinct parameters.
struct MultiChoiceHead {
  LinearParams hidden;  // [2d, d]
  LinearParams out;     // [d, 1]
};

inline Tensor multichoice_score(const Tensor& o_question, const Tensor& o_answer,
                                const MultiChoiceHead& head) {
  Tensor joint = concat_cols({reshape(o_question, {1, o_question.numel()}),
                              reshape(o_answer, {1, o_answer.numel()})});
  return reshape(linear(gelu(linear(joint, head.hidden)), head.out), {1});
}

inline Tensor multichoice_scores(const Tensor& o_question, const std::vector<Tensor>& o_answers,
                                 const MultiChoiceHead& head) {
  if (o_answers.size() < 2)
    throw ConfigError("multichoice_scores: need at least 2 candidates, got " +
                      std::to_string(o_answers.size()));
  std::vector<Tensor> parts;
  parts.reserve(o_answers.size());
  for (const Tensor& o_a : o_answers)
    parts.push_back(reshape(multichoice_score(o_question, o_a, head), {1, 1}));
  return reshape(concat_cols(parts), {o_answers.size()});
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline Tensor cross_entropy(const Tensor& logits, std::size_t target) {
  if (target >= logits.numel())
    throw ContractError("cross_entropy: target " + std::to_string(target) + " out of " +
                        std::to_string(logits.numel()) + " classes");
  return scale(pick(log_softmax_last(logits), target), -1.0);
}

inline Tensor mse_loss(const Tensor& pred, double target) {
  Tensor diff = add_scalar(pred, -target);
  return mul(diff, diff);
}

// Sum over incorrect candidates of max(0, 1 + p_k - p_correct).
inline Tensor hinge_loss(const Tensor& scores, std::size_t correct) {
  if (correct >= scores.numel())
    throw ContractError("hinge_loss: correct index " + std::to_string(correct) + " out of " +
                        std::to_string(scores.numel()));
  Tensor p_correct = pick(scores, correct);
  Tensor loss = Tensor::zeros({1});
  for (std::size_t k = 0; k < scores.numel(); ++k) {
    if (k == correct) continue;
    loss = add(loss, relu(add_scalar(sub(pick(scores, k), p_correct), 1.0)));
  }
  return loss;
}

// Ties break toward the lowest index.
inline std::size_t argmax(const std::vector<double>& v) {
  if (v.empty()) throw ContractError("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace mhn
