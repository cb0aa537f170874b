#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "mixt/common.hpp"
#include "mixt/graph.hpp"
#include "mixt/tensor.hpp"

namespace mixt {

// Ordered name -> tensor map with a per-parameter trainable flag. The flag
// is the freeze seam: graphs built over the store propagate gradients only
// into parameters marked trainable.
class ParameterStore {
  public:
    int add(const std::string& name, Tensor value, bool trainable) {
        if (index_.count(name)) fail("ParameterStore: duplicate parameter \"", name, "\"");
        const int idx = static_cast<int>(names_.size());
        names_.push_back(name);
        values_.push_back(std::move(value));
        trainable_.push_back(trainable ? 1 : 0);
        index_.emplace(name, idx);
        return idx;
    }

    int count() const { return static_cast<int>(names_.size()); }

    int index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) fail("ParameterStore: no parameter named \"", name, "\"");
        return it->second;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const std::string& name(int idx) const {
        check(idx);
        return names_[idx];
    }

    Tensor& value(int idx) {
        check(idx);
        return values_[idx];
    }
    const Tensor& value(int idx) const {
        check(idx);
        return values_[idx];
    }
    Tensor& value(const std::string& name) { return values_[index_of(name)]; }
    const Tensor& value(const std::string& name) const { return values_[index_of(name)]; }

    bool trainable(int idx) const {
        check(idx);
        return trainable_[idx] != 0;
    }
    bool trainable(const std::string& name) const { return trainable(index_of(name)); }

    void set_trainable(int idx, bool t) {
        check(idx);
        trainable_[idx] = t ? 1 : 0;
    }

    // Flips the flag on every parameter whose name starts with prefix.
    int set_trainable_prefix(const std::string& prefix, bool t) {
        int hits = 0;
        for (int i = 0; i < count(); ++i) {
            if (names_[i].rfind(prefix, 0) == 0) {
                trainable_[i] = t ? 1 : 0;
                ++hits;
            }
        }
        return hits;
    }

    size_t scalar_count() const {
        size_t n = 0;
        for (const auto& v : values_) n += v.size();
        return n;
    }

    // Checksum over (name, shape, values) of parameters under prefix; the
    // freeze-contract tests compare these across training steps.
    uint64_t checksum(const std::string& prefix = "") const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (int i = 0; i < count(); ++i) {
            if (names_[i].rfind(prefix, 0) != 0) continue;
            h = fnv1a64(names_[i], h);
            h = fnv1a64(&values_[i].rows, sizeof(int), h);
            h = fnv1a64(&values_[i].cols, sizeof(int), h);
            h = fnv1a64(values_[i].data.data(), values_[i].data.size() * sizeof(double), h);
        }
        return h;
    }

    std::vector<std::string> names_with_prefix(const std::string& prefix) const {
        std::vector<std::string> out;
        for (const auto& n : names_)
            if (n.rfind(prefix, 0) == 0) out.push_back(n);
        return out;
    }

  private:
    void check(int idx) const {
        require(idx >= 0 && idx < count(), "ParameterStore: index out of range");
    }

    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::vector<uint8_t> trainable_;
    std::unordered_map<std::string, int> index_;
};

// Graph leaf for a stored parameter; gradient flow follows the store's
// trainable flag.
inline int param_ref(Graph& g, const ParameterStore& store, int idx) {
    return g.param(&store.value(idx), idx, store.trainable(idx));
}

}  // namespace mixt
