#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "tabor/adam.hpp"
#include "tabor/architecture.hpp"
#include "tabor/dataset.hpp"
#include "tabor/ops.hpp"
#include "tabor/rng.hpp"
#include "tabor/tape.hpp"
#include "tabor/tensor.hpp"

namespace tabor {

struct TrainingMeta {
  int epochs_trained = 0;
  double final_accuracy = 0.0;
  uint64_t seed = 0;
};

// A classifier: an architecture plus one weight tensor per ParamShape, in
// param_shapes() order.  Weight handles are shared, so pass networks by
// const reference and use clone() before mutating.
template <typename S>
struct NetworkT {
  Architecture arch;
  std::vector<TensorT<S>> weights;
  TrainingMeta meta;

  // Glorot-uniform weights, zero biases, fully determined by the seed.
  static NetworkT build(const Architecture& arch, uint64_t seed) {
    arch.validate();
    NetworkT net;
    net.arch = arch;
    net.meta.seed = seed;
    Rng rng(derive_seed(seed, 0));
    for (const ParamShape& p : arch.param_shapes()) {
      TensorT<S> w(p.shape);
      if (p.shape.size() == 4) {  // conv kernel [3,3,ci,co]
        double fan_in = 9.0 * p.shape[2];
        double fan_out = 9.0 * p.shape[3];
        double a = std::sqrt(6.0 / (fan_in + fan_out));
        for (S& x : w.values()) x = static_cast<S>(rng.uniform(-a, a));
      } else if (p.shape.size() == 2) {  // dense [d,units]
        double a = std::sqrt(6.0 / (p.shape[0] + p.shape[1]));
        for (S& x : w.values()) x = static_cast<S>(rng.uniform(-a, a));
      }
      // rank-1 biases stay zero
      net.weights.push_back(std::move(w));
    }
    return net;
  }

  // Applies every layer except the trailing softmax.  batch: [N,H,W,C].
  TensorT<S> forward_logits(const TensorT<S>& batch) const {
    require(batch.rank() == 4, "network: expected [N,H,W,C] batch, got " +
                                   shape_str(batch.shape()));
    require(batch.dim(1) == arch.height && batch.dim(2) == arch.width &&
                batch.dim(3) == arch.channels,
            "network: batch " + shape_str(batch.shape()) + " does not match input geometry " +
                std::to_string(arch.height) + "x" + std::to_string(arch.width) + "x" +
                std::to_string(arch.channels));
    TensorT<S> x = batch;
    size_t wi = 0;
    for (const LayerSpec& l : arch.layers) {
      switch (l.kind) {
        case LayerKind::Conv:
          x = add_channel_bias(conv2d(x, weights[wi]), weights[wi + 1]);
          wi += 2;
          break;
        case LayerKind::ReLU:
          x = relu(x);
          break;
        case LayerKind::MaxPool:
          x = maxpool2(x);
          break;
        case LayerKind::Flatten:
          x = reshape(x, {x.dim(0), static_cast<int>(x.numel() / x.dim(0))});
          break;
        case LayerKind::Dense:
          x = add_rowvec(matmul(x, weights[wi]), weights[wi + 1]);
          wi += 2;
          break;
        case LayerKind::Softmax:
          break;  // prediction applies it explicitly
      }
    }
    return x;
  }

  // Class probabilities; each row sums to one.
  TensorT<S> predict(const TensorT<S>& batch) const { return softmax_rows(forward_logits(batch)); }

  NetworkT clone() const {
    NetworkT out;
    out.arch = arch;
    out.meta = meta;
    out.weights.reserve(weights.size());
    for (const auto& w : weights) out.weights.push_back(w.detach());
    return out;
  }
};

using Network = NetworkT<float>;

struct TrainConfig {
  int epochs = 500;
  double learning_rate = 1e-3;
  int batch_size = 32;
  uint64_t seed = 0;
};

// Fraction of the given samples whose argmax prediction matches the label.
// Evaluates in chunks; the network must not be mid-training (weights on a
// recording tape) or the pass would pollute the tape.
template <typename S>
double accuracy(const NetworkT<S>& net, const LabeledDataset& data, const std::vector<int>& idx) {
  require(!idx.empty(), "accuracy: no samples to evaluate");
  constexpr size_t kChunk = 128;
  size_t hits = 0;
  for (size_t start = 0; start < idx.size(); start += kChunk) {
    size_t stop = std::min(idx.size(), start + kChunk);
    std::vector<int> part(idx.begin() + static_cast<int64_t>(start),
                          idx.begin() + static_cast<int64_t>(stop));
    TensorT<S> batch = make_batch<S>(data, part);
    std::vector<int> pred = argmax_rows(net.forward_logits(batch));
    for (size_t i = 0; i < part.size(); ++i)
      if (pred[i] == data.labels[static_cast<size_t>(part[i])]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

// Minibatch Adam training on the train split.  Returns a new network with
// detached weights; the input is untouched (epochs == 0 hands back an exact
// copy).  on_epoch, if given, receives (epoch, mean loss) for logging.
template <typename S>
NetworkT<S> train(const NetworkT<S>& net, const LabeledDataset& data, const TrainConfig& cfg,
                  const std::function<void(int, double)>& on_epoch = {}) {
  require(cfg.epochs >= 0, "train: negative epoch count");
  require(cfg.batch_size > 0, "train: batch size must be positive");
  data.validate();
  require(data.num_classes == net.arch.num_classes,
          "train: dataset has " + std::to_string(data.num_classes) + " classes, network expects " +
              std::to_string(net.arch.num_classes));
  std::vector<int> order = data.train_indices();
  require(!order.empty(), "train: dataset has no training samples");

  NetworkT<S> work = net.clone();
  TapeT<S> tape;
  for (auto& w : work.weights) tape.watch(w);
  AdamConfig ac;
  ac.learning_rate = cfg.learning_rate;
  AdamT<S> adam(work.weights, ac);
  Rng rng(derive_seed(cfg.seed, 1));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0;
    size_t batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      std::vector<int> part(order.begin() + static_cast<int64_t>(start),
                            order.begin() + static_cast<int64_t>(stop));
      TensorT<S> batch = make_batch<S>(data, part);
      TensorT<S> loss = cross_entropy_softmax(work.forward_logits(batch), labels_of(data, part));
      tape.backward(loss);
      adam.step();
      adam.zero_grad();
      loss_sum += static_cast<double>(loss.item());
      ++batches;
    }
    if (on_epoch) on_epoch(epoch, batches ? loss_sum / static_cast<double>(batches) : 0.0);
  }

  NetworkT<S> out = work.clone();  // drops tape affiliation
  out.meta.epochs_trained = net.meta.epochs_trained + cfg.epochs;
  out.meta.seed = cfg.seed;
  std::vector<int> eval = data.test_indices();
  if (eval.empty()) eval = data.train_indices();
  out.meta.final_accuracy = accuracy(out, data, eval);
  return out;
}

}  // namespace tabor
