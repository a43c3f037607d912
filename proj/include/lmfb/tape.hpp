#pragma once

#include <functional>
#include <unordered_set>
#include <vector>

#include "lmfb/tensor.hpp"

namespace lmfb {

// Reverse-mode tape. Ops append one adjoint closure per recorded forward op;
// backward() seeds the scalar loss with 1 and replays the closures in
// reverse, visiting each exactly once. Replay order is fixed, so gradients
// are bit-identical across runs.
class Tape {
 public:
  void record(std::function<void()> adjoint, const Tensor& output) {
    nodes_.push_back(std::move(adjoint));
    outputs_.insert(output.id());
  }

  bool recorded(const Tensor& t) const { return outputs_.count(t.id()) != 0; }

  std::size_t size() const { return nodes_.size(); }

  void backward(Tensor scalar_loss) {
    if (scalar_loss.size() != 1)
      throw UsageError("Tape::backward: loss must be a scalar of shape [1]");
    if (!recorded(scalar_loss))
      throw UsageError("Tape::backward: loss was not produced under this tape");
    scalar_loss.grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void clear() {
    nodes_.clear();
    outputs_.clear();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  std::unordered_set<const void*> outputs_;
};

}  // namespace lmfb
