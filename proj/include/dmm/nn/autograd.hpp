#pragma once

#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dmm/nn/ops.hpp"
#include "dmm/nn/tensor.hpp"

namespace dmm::nn {

/// Gradients of scalar `y` with respect to each tensor in `wrt`.
///
/// Only the part of the graph between `y` and `wrt` is visited. With
/// `create_graph` the returned gradients are themselves recorded and can be
/// differentiated again. Tensors that `y` does not depend on get zeros.
template <class T>
std::vector<Tensor<T>> gradients(const Tensor<T>& y, const std::vector<Tensor<T>>& wrt, bool create_graph = false)
{
    using Node = detail::Node<T>;
    std::vector<Tensor<T>> result(wrt.size());
    if (!y.requires_grad()) {
        for (std::size_t i = 0; i < wrt.size(); ++i) {
            result[i] = Tensor<T>::zeros(wrt[i].shape());
        }
        return result;
    }

    std::unordered_set<const Node*> targets;
    for (const auto& w : wrt) {
        targets.insert(w.node());
    }

    // post-order: parents before children
    std::vector<std::shared_ptr<Node>> order;
    std::unordered_map<const Node*, bool> needed;
    {
        std::unordered_set<const Node*> visited;
        std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
        stack.emplace_back(y.node_ptr(), 0);
        visited.insert(y.node());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                const auto& p = node->parents[next++];
                if (p->requires_grad && visited.insert(p.get()).second) {
                    stack.emplace_back(p, 0);
                }
                continue;
            }
            bool need = targets.contains(node.get());
            for (const auto& p : node->parents) {
                need = need || (p->requires_grad && needed[p.get()]);
            }
            needed[node.get()] = need;
            order.push_back(node);
            stack.pop_back();
        }
    }

    GradMode mode(create_graph);
    std::unordered_map<const Node*, Tensor<T>> grads;
    std::unordered_set<const Node*> owned;
    grads[y.node()] = Tensor<T>::full(y.shape(), T(1));

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const auto& node = *it;
        auto gi = grads.find(node.get());
        if (gi == grads.end() || !needed[node.get()] || node->parents.empty()) {
            continue;
        }
        const Tensor<T> g = gi->second;
        if (!targets.contains(node.get())) {
            grads.erase(gi);
        }
        std::vector<bool> needs(node->parents.size());
        for (std::size_t k = 0; k < needs.size(); ++k) {
            const auto& p = node->parents[k];
            needs[k] = p->requires_grad && needed[p.get()];
        }
        const auto parent_grads = node->backward(Tensor<T>(node), g, needs);
        for (std::size_t k = 0; k < needs.size(); ++k) {
            if (!needs[k] || !parent_grads[k].defined()) {
                continue;
            }
            const Node* p = node->parents[k].get();
            auto [slot, inserted] = grads.try_emplace(p, parent_grads[k]);
            if (inserted) {
                continue;
            }
            if (create_graph || slot->second.shape() != parent_grads[k].shape()) {
                slot->second = add(slot->second, parent_grads[k]);
                continue;
            }
            // first-order sums are accumulated in place into a private copy
            if (owned.insert(p).second) {
                slot->second = Tensor<T>::constant(slot->second.shape(),
                                                   std::vector<T>(slot->second.values().begin(),
                                                                  slot->second.values().end()));
            }
            auto& dst = slot->second.mutable_values();
            const auto src = parent_grads[k].values();
            for (std::size_t i = 0; i < dst.size(); ++i) {
                dst[i] += src[i];
            }
        }
    }

    for (std::size_t i = 0; i < wrt.size(); ++i) {
        auto gi = grads.find(wrt[i].node());
        result[i] = gi != grads.end() ? gi->second : Tensor<T>::zeros(wrt[i].shape());
    }
    return result;
}

} // namespace dmm::nn
