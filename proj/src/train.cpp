#include "turbovit/train.hpp"

#include <cstdio>
#include <sstream>

namespace turbovit {

float planted_value(int label, int i, int j) {
  // Four planted textures with 2-pixel bands: horizontal stripes, vertical
  // stripes, checkerboard, plain background.
  switch (label) {
    case 0: return ((i / 2) % 2) ? 1.0f : -1.0f;
    case 1: return ((j / 2) % 2) ? 1.0f : -1.0f;
    case 2: return (((i / 2) + (j / 2)) % 2) ? 1.0f : -1.0f;
    default: return 0.0f;
  }
}

ToyData make_planted_dataset(const ToyTask& task, int count, uint64_t seed) {
  if (task.classes < 2 || task.classes > 4)
    throw ConfigError("planted task supports 2 to 4 texture classes, got " +
                      std::to_string(task.classes));
  const int r = task.resolution;
  ToyData data;
  data.images = TensorF({count, 3, r, r});
  data.labels.resize(static_cast<size_t>(count));
  Rng rng(seed);
  for (int n = 0; n < count; ++n) {
    const int label = static_cast<int>(rng.below(task.classes));
    data.labels[static_cast<size_t>(n)] = label;
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j)
          data.images(n, c, i, j) =
              planted_value(label, i, j) + static_cast<float>(rng.normal() * 0.25);
  }
  return data;
}

namespace {

TensorF gather_images(const ToyData& data, const std::vector<int>& idx, int resolution) {
  const int64_t sample = 3LL * resolution * resolution;
  TensorF batch({static_cast<int>(idx.size()), 3, resolution, resolution});
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(data.images.ptr() + idx[i] * sample, data.images.ptr() + (idx[i] + 1) * sample,
              batch.ptr() + static_cast<int64_t>(i) * sample);
  return batch;
}

}  // namespace

FitResult fit(const ArchSpec& spec, const ToyTask& task, const FitOptions& options) {
  ArchSpec at_res = spec;
  at_res.input_resolution = task.resolution;
  if (at_res.head.classes != task.classes)
    throw ConfigError("fit: spec head.classes " + std::to_string(at_res.head.classes) +
                      " != task classes " + std::to_string(task.classes));
  Model<float> model = build<float>(at_res, options.seed);

  const ToyData train = make_planted_dataset(task, task.train_size, task.seed);
  const ToyData eval = make_planted_dataset(task, task.eval_size, task.seed + 1);

  FitResult result;
  for (int step = 0; step < options.steps; ++step) {
    // Round-robin minibatches: deterministic epochs over the training set.
    std::vector<int> idx(static_cast<size_t>(options.batch_size));
    std::vector<int> labels(static_cast<size_t>(options.batch_size));
    for (int i = 0; i < options.batch_size; ++i) {
      idx[static_cast<size_t>(i)] =
          (step * options.batch_size + i) % task.train_size;
      labels[static_cast<size_t>(i)] = train.labels[static_cast<size_t>(idx[static_cast<size_t>(i)])];
    }
    TensorF batch = gather_images(train, idx, task.resolution);

    ModelCache<float> cache;
    TensorF logits = forward(model, batch, &cache);
    TensorF dlogits;
    const double loss = cross_entropy(logits, labels, &dlogits);
    result.losses.push_back(loss);
    if (!std::isfinite(loss)) {
      result.diverged = true;
      result.diverged_step = step;
      return result;
    }
    ModelGrads<float> grads = backward(model, cache, dlogits);
    sgd_step(model, grads, options.lr);
  }

  // Eval accuracy in small batches.
  int correct = 0;
  const int chunk = 16;
  for (int start = 0; start < task.eval_size; start += chunk) {
    const int n = std::min(chunk, task.eval_size - start);
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = start + i;
    TensorF batch = gather_images(eval, idx, task.resolution);
    TensorF logits = forward(model, batch);
    for (int i = 0; i < n; ++i) {
      const float* row = logits.ptr() + static_cast<int64_t>(i) * task.classes;
      int arg = 0;
      for (int c = 1; c < task.classes; ++c)
        if (row[c] > row[arg]) arg = c;
      if (arg == eval.labels[static_cast<size_t>(start + i)]) ++correct;
    }
  }
  result.eval_accuracy = static_cast<double>(correct) / task.eval_size;
  return result;
}

std::string loss_curve_csv(const FitResult& result) {
  std::ostringstream os;
  os << "step,loss\n";
  char buf[64];
  for (size_t i = 0; i < result.losses.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.6f\n", i, result.losses[i]);
    os << buf;
  }
  return os.str();
}

}  // namespace turbovit
