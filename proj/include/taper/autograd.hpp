#pragma once

#include <functional>
#include <unordered_set>
#include <utility>
#include <vector>

#include "taper/error.hpp"
#include "taper/tensor.hpp"

namespace taper {

// Append-only record of forward operations. backward() walks the nodes in
// exact reverse append order; each node's closure reads its output's grad and
// accumulates into its inputs' grads.
template <class T>
class Graph {
  public:
    struct Node {
        const char* op;
        std::vector<TensorPtr<T>> inputs;
        TensorPtr<T> output;
        std::function<void()> backward;
    };

    bool recording() const { return recording_; }
    void set_recording(bool on) { recording_ = on; }

    void record(const char* op, std::vector<TensorPtr<T>> inputs, TensorPtr<T> output,
                std::function<void()> backward) {
        if (!recording_) return;
        nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward)});
    }

    std::size_t size() const { return nodes_.size(); }
    const Node& node(std::size_t i) const { return nodes_.at(i); }

    // Populates grad slots of every requires_grad tensor reachable from
    // `loss`. Repeated calls accumulate into leaf grads: intermediate grads
    // (tensors produced by some node) are reset at the start of each call so
    // each pass propagates exactly one unit of loss sensitivity.
    void backward(const TensorPtr<T>& loss) {
        if (!loss) throw ContractError("backward: null loss");
        if (loss->numel() != 1)
            throw ContractError("backward: loss must be scalar, got shape " +
                                shape_str(loss->shape));
        std::unordered_set<const Tensor<T>*> produced;
        for (const auto& n : nodes_) produced.insert(n.output.get());
        if (!produced.count(loss.get()))
            throw ContractError("backward: loss is not connected to this graph");

        for (const auto& n : nodes_) {
            n.output->ensure_grad();
            n.output->zero_grad();
        }
        loss->grad[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            it->backward();
        }
    }

    void clear() { nodes_.clear(); }

  private:
    std::vector<Node> nodes_;
    bool recording_ = true;
};

namespace detail {

// Accumulation helper used by op closures: request the grad buffer of an
// input only when gradient actually needs to flow into it.
template <class T>
inline bool wants_grad(const TensorPtr<T>& t) {
    return t->requires_grad;
}

}  // namespace detail

}  // namespace taper
