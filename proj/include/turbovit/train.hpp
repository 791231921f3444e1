#pragma once

// Sanity fit: plain SGD on cross-entropy over a synthetic planted-pattern
// task, demonstrating the composed architecture trains end to end. Each image
// carries one of `classes` planted textures (stripe orientations, checker,
// plain) under Gaussian noise; the label is fully determined by the texture.

#include <vector>

#include "turbovit/model.hpp"

namespace turbovit {

struct ToyTask {
  int classes = 4;
  int resolution = 32;
  int train_size = 256;
  int eval_size = 64;
  uint64_t seed = 0;
};

struct ToyData {
  TensorF images;           // [N, 3, R, R]
  std::vector<int> labels;  // [N]
};

ToyData make_planted_dataset(const ToyTask& task, int count, uint64_t seed);

// Mean cross-entropy of logits [B, C] against integer labels; optionally
// fills dlogits with the gradient (softmax - onehot) / B.
template <class S>
double cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels,
                     Tensor<S>* dlogits = nullptr) {
  const int B = logits.size(0), C = logits.size(1);
  if (static_cast<int>(labels.size()) != B)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                     std::to_string(B));
  if (dlogits) *dlogits = Tensor<S>(logits.shape);
  double total = 0.0;
  for (int b = 0; b < B; ++b) {
    const S* row = logits.ptr() + static_cast<int64_t>(b) * C;
    S mx = row[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (int c = 0; c < C; ++c) sum += std::exp(static_cast<double>(row[c] - mx));
    const double lse = std::log(sum) + static_cast<double>(mx);
    total += lse - static_cast<double>(row[labels[static_cast<size_t>(b)]]);
    if (dlogits) {
      S* drow = dlogits->ptr() + static_cast<int64_t>(b) * C;
      for (int c = 0; c < C; ++c) {
        const double p = std::exp(static_cast<double>(row[c]) - lse);
        drow[c] = static_cast<S>(p / B);
      }
      drow[labels[static_cast<size_t>(b)]] -= S(1) / static_cast<S>(B);
    }
  }
  return total / B;
}

struct FitOptions {
  int steps = 200;
  float lr = 0.01f;
  int batch_size = 8;
  uint64_t seed = 0;
};

struct FitResult {
  std::vector<double> losses;  // one entry per step, recorded before the update
  double eval_accuracy = 0.0;
  bool diverged = false;
  int diverged_step = -1;
};

// Builds the spec at the task resolution and runs `steps` SGD updates.
// Divergence (non-finite loss) stops the fit and is reported, not thrown.
FitResult fit(const ArchSpec& spec, const ToyTask& task, const FitOptions& options);

std::string loss_curve_csv(const FitResult& result);

}  // namespace turbovit
