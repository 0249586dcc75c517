#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "dmm/nn/autograd.hpp"
#include "dmm/nn/tensor.hpp"

namespace dmm::nn {

/// Named trainable tensors with gradient slots. Iteration is in name order.
template <class T>
class ParameterStore {
public:
    struct Entry {
        Tensor<T> value;
        std::vector<T> grad;
        bool has_grad = false;
    };

    Tensor<T> add(const std::string& name, Shape shape, std::vector<T> values)
    {
        if (entries_.contains(name)) {
            throw ConfigError("duplicate parameter name " + name);
        }
        Entry e{Tensor<T>::parameter(std::move(shape), std::move(values)), {}, false};
        auto it = entries_.emplace(name, std::move(e)).first;
        return it->second.value;
    }

    bool contains(const std::string& name) const { return entries_.contains(name); }

    const Tensor<T>& get(const std::string& name) const
    {
        auto it = entries_.find(name);
        if (it == entries_.end()) {
            throw ConfigError("unknown parameter " + name);
        }
        return it->second.value;
    }

    Entry& entry(const std::string& name)
    {
        auto it = entries_.find(name);
        if (it == entries_.end()) {
            throw ConfigError("unknown parameter " + name);
        }
        return it->second;
    }

    const std::map<std::string, Entry>& entries() const noexcept { return entries_; }
    std::map<std::string, Entry>& entries() noexcept { return entries_; }

    std::vector<std::string> names() const
    {
        std::vector<std::string> out;
        for (const auto& [name, e] : entries_) {
            out.push_back(name);
        }
        return out;
    }

    std::vector<Tensor<T>> tensors() const
    {
        std::vector<Tensor<T>> out;
        for (const auto& [name, e] : entries_) {
            out.push_back(e.value);
        }
        return out;
    }

    std::size_t size() const noexcept { return entries_.size(); }

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto& [name, e] : entries_) {
            n += e.value.numel();
        }
        return n;
    }

    /// Adds d(loss)/d(param) into every slot whose name passes `filter`;
    /// the other slots receive explicit zeros.
    template <class Filter>
    void accumulate(const Tensor<T>& loss, Filter&& filter)
    {
        std::vector<std::string> names;
        std::vector<Tensor<T>> wrt;
        for (auto& [name, e] : entries_) {
            if (filter(name)) {
                names.push_back(name);
                wrt.push_back(e.value);
            }
            if (!e.has_grad) {
                e.grad.assign(e.value.numel(), T(0));
                e.has_grad = true;
            }
        }
        const auto grads = gradients(loss, wrt);
        for (std::size_t i = 0; i < names.size(); ++i) {
            auto& e = entries_.at(names[i]);
            const auto gv = grads[i].values();
            for (std::size_t k = 0; k < gv.size(); ++k) {
                e.grad[k] += gv[k];
            }
        }
    }

    void accumulate(const Tensor<T>& loss)
    {
        accumulate(loss, [](const std::string&) { return true; });
    }

    /// Marks every slot as holding an all-zero gradient.
    void zero_grad()
    {
        for (auto& [name, e] : entries_) {
            e.grad.assign(e.value.numel(), T(0));
            e.has_grad = true;
        }
    }

    void clear_grad()
    {
        for (auto& [name, e] : entries_) {
            e.grad.clear();
            e.has_grad = false;
        }
    }

    /// FNV-1a over names and value bits.
    std::uint64_t fingerprint() const
    {
        std::uint64_t h = 1469598103934665603ull;
        auto mix = [&h](const void* p, std::size_t n) {
            const auto* b = static_cast<const unsigned char*>(p);
            for (std::size_t i = 0; i < n; ++i) {
                h = (h ^ b[i]) * 1099511628211ull;
            }
        };
        for (const auto& [name, e] : entries_) {
            mix(name.data(), name.size());
            mix(e.value.values().data(), e.value.numel() * sizeof(T));
        }
        return h;
    }

private:
    std::map<std::string, Entry> entries_;
};

} // namespace dmm::nn
