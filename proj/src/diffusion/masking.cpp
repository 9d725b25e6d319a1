#include <cmath>
#include <string>

#include "relay/diffusion.hpp"
#include "relay/error.hpp"

namespace relay {

int MaskedSequence::masked_count() const {
  int n = 0;
  for (auto m : masked) n += m ? 1 : 0;
  return n;
}

std::vector<int> MaskedSequence::masked_positions() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (masked[i]) out.push_back(i);
  return out;
}

void MaskedSequence::check_invariants() const {
  if (masked.size() != tokens.size() || clue.size() != tokens.size())
    throw InvariantError("masked sequence arrays have different lengths");
  for (int i = 0; i < size(); ++i) {
    if (masked[i] && clue[i]) throw InvariantError("clue position " + std::to_string(i) + " is masked");
    if ((tokens[i] == token::kMask) != static_cast<bool>(masked[i]))
      throw InvariantError("mask flag disagrees with token at " + std::to_string(i));
  }
}

MaskedSequence fully_masked(std::span<const int> x0, std::span<const std::uint8_t> clue) {
  if (x0.size() != clue.size()) throw InputError("x0 and clue flags differ in length");
  MaskedSequence s;
  s.tokens.assign(x0.begin(), x0.end());
  s.clue.assign(clue.begin(), clue.end());
  s.masked.assign(x0.size(), 0);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    if (clue[i]) continue;
    s.tokens[i] = token::kMask;
    s.masked[i] = 1;
  }
  return s;
}

MaskedSequence mask_uniform(std::span<const int> x0, double t,
                            std::span<const std::uint8_t> clue, Rng& rng) {
  if (!(t >= 0.0 && t <= 1.0)) throw RangeError("mask_uniform: t must lie in [0, 1]");
  if (x0.size() != clue.size()) throw InputError("x0 and clue flags differ in length");
  MaskedSequence s;
  s.tokens.assign(x0.begin(), x0.end());
  s.clue.assign(clue.begin(), clue.end());
  s.masked.assign(x0.size(), 0);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    if (clue[i]) continue;
    if (rng.uniform() < t) {
      s.tokens[i] = token::kMask;
      s.masked[i] = 1;
    }
  }
  return s;
}

template <typename T>
double masked_cross_entropy(const Matrix<T>& logits, Eigen::Index row0, std::span<const int> x0,
                            std::span<const int> positions, Matrix<T>* d_logits,
                            double grad_scale) {
  if (positions.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(positions.size());
  double total = 0.0;
  for (int pos : positions) {
    const Eigen::Index r = row0 + pos;
    if (r < 0 || r >= logits.rows()) throw InputError("masked position outside the logits");
    const int target = x0[pos];
    if (target < 0 || target >= logits.cols()) throw InputError("target id out of range");
    const auto row = logits.row(r);
    const T mx = row.maxCoeff();
    const T sum = (row.array() - mx).exp().sum();
    const T log_z = mx + std::log(sum);
    total += static_cast<double>(log_z - row(target));
    if (d_logits) {
      auto g = d_logits->row(r);
      const T s = static_cast<T>(grad_scale * inv_n);
      g.array() += s * (row.array() - log_z).exp();
      g(target) -= s;
    }
  }
  return total * inv_n;
}

template <typename T>
double mdm_loss(const Matrix<T>& logits, std::span<const int> x0, std::span<const int> masked,
                double t) {
  if (masked.empty()) return 0.0;
  if (!(t > 0.0)) throw RangeError("mdm_loss: t must be positive");
  return masked_cross_entropy(logits, 0, x0, masked) / t;
}

template <typename T>
double rollout_step_loss(const Matrix<T>& logits, std::span<const int> x0,
                         std::span<const int> masked) {
  return masked_cross_entropy(logits, 0, x0, masked);
}

#define RELAY_INSTANTIATE(T)                                                                    \
  template double masked_cross_entropy<T>(const Matrix<T>&, Eigen::Index, std::span<const int>, \
                                          std::span<const int>, Matrix<T>*, double);            \
  template double mdm_loss<T>(const Matrix<T>&, std::span<const int>, std::span<const int>,     \
                              double);                                                          \
  template double rollout_step_loss<T>(const Matrix<T>&, std::span<const int>,                  \
                                       std::span<const int>);

RELAY_INSTANTIATE(float)
RELAY_INSTANTIATE(double)
#undef RELAY_INSTANTIATE

}  // namespace relay
