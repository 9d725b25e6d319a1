#include <algorithm>
#include <cmath>
#include <string>

#include "relay/diffusion.hpp"
#include "relay/error.hpp"

namespace relay {

template <typename T>
std::pair<int, double> decode_position(const Matrix<T>& logits, Eigen::Index row,
                                       Normalizer normalizer) {
  const auto r = logits.row(row);
  const Eigen::Index span = normalizer == Normalizer::FullVocabulary ? r.size() : kDecodableIds;
  const double mx = static_cast<double>(r.head(span).maxCoeff());
  double z = 0.0;
  for (Eigen::Index v = 0; v < span; ++v) z += std::exp(static_cast<double>(r(v)) - mx);
  int best = 0;
  for (int v = 1; v < kDecodableIds; ++v)
    if (r(v) > r(best)) best = v;
  return {best, std::exp(static_cast<double>(r(best)) - mx) / z};
}

StepDecision select_positions(std::span<const PositionConfidence> confidences, double tau) {
  if (confidences.empty()) throw EmptySetError("select_positions: no masked positions");
  StepDecision out;
  out.confidences.assign(confidences.begin(), confidences.end());
  for (const auto& c : out.confidences)
    if (!(c.confidence >= 0.0 && c.confidence <= 1.0))
      throw RangeError("confidence outside [0, 1] at position " + std::to_string(c.position));

  std::vector<PositionConfidence> order = out.confidences;
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    const double ka = 1.0 - a.confidence, kb = 1.0 - b.confidence;
    if (ka != kb) return ka < kb;
    return a.position < b.position;
  });

  // A running sum equal to tau up to rounding counts as reaching it.
  constexpr double kSlack = 1e-12;
  double running = 0.0;
  for (const auto& c : order) {
    running += 1.0 - c.confidence;
    if (!(running < tau - kSlack)) break;
    out.selected.push_back(c.position);
  }
  if (out.selected.empty()) {
    out.selected.push_back(order.front().position);
    out.fallback_used = true;
  }
  return out;
}

MaskedSequence commit(const MaskedSequence& s, std::span<const int> selected,
                      std::span<const int> values) {
  if (values.size() != s.tokens.size()) throw InputError("commit: values length differs from sequence");
  MaskedSequence out = s;
  for (int pos : selected) {
    if (pos < 0 || pos >= s.size()) throw InvariantError("commit: position out of range");
    if (s.clue[pos]) throw InvariantError("commit: position " + std::to_string(pos) + " is a clue");
    if (!out.masked[pos])
      throw InvariantError("commit: position " + std::to_string(pos) + " is not masked");
    out.tokens[pos] = values[pos];
    out.masked[pos] = 0;
  }
  return out;
}

template std::pair<int, double> decode_position<float>(const Matrix<float>&, Eigen::Index, Normalizer);
template std::pair<int, double> decode_position<double>(const Matrix<double>&, Eigen::Index, Normalizer);

}  // namespace relay
